mod args;
mod render;

use std::fs::File;
use std::io::BufWriter;
use std::process::ExitCode;

use aoi_core::analytics::{
    age_earliest_k_approx, age_exact, age_preselected_k_approx, age_preselected_k_renewal,
    age_wait_for_all_approx, optimal_alpha, optimal_k_closed_form, optimal_k_exact,
};
use aoi_core::experiments::{
    run_fig4, run_fig5, run_fig6, run_validation, Fig4Options, Fig5Options, Fig6Options,
    SimSettings, ValidationSpec,
};
use aoi_core::sim::{replicate, simulate_traced, DEFAULT_WARMUP};
use aoi_core::{DelayModel, Error, Scheme, SimConfig, StoppingPolicy};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::{
    AnalyzeArgs, Cli, Command, EffortArgs, ExperimentArgs, Figure, Format, OptimizeArgs,
    SimulateArgs, ThresholdArgs, ValidateArgs,
};
use render::{Analysis, Optimum, Simulation};

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. }
            | Error::ThresholdOutOfRange { .. }
            | Error::AlphaOutOfDomain(_)
            | Error::InvalidSweep(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(Error::Json(e))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(Error::Io(e))
    }
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Optimize(a) => optimize(a),
        Command::Experiment(a) => experiment(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let mut cmd = Cli::command();
            cmd.build();
            let sub = cmd
                .find_subcommand_mut(name)
                .expect("parsed subcommand exists");
            sub.error(ErrorKind::ValueValidation, msg).exit()
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn resolve_threshold(scheme: Scheme, t: &ThresholdArgs) -> Result<(usize, usize), Failure> {
    let n = t.n as usize;
    if scheme == Scheme::WaitForAll {
        if t.k.is_some_and(|k| k as usize != n) || t.alpha.is_some_and(|a| a != 1.0) {
            return usage(
                "wait-for-all waits for every node; --k must equal --n and --alpha must be 1",
            );
        }
        return Ok((n, n));
    }
    let k = match (t.k, t.alpha) {
        (Some(k), _) => k as usize,
        (None, Some(alpha)) => ((alpha * n as f64).round() as usize).clamp(1, n),
        (None, None) => return usage(format!("{scheme} needs --k or --alpha")),
    };
    if k > n {
        return usage(format!("--k {k} exceeds --n {n}"));
    }
    Ok((n, k))
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    let scheme = Scheme::from(a.scheme);
    let (n, k) = resolve_threshold(scheme, &a.threshold)?;
    let (lambda, shift) = (a.link.lambda, a.link.shift);
    let exact = age_exact(scheme, lambda, shift, n, k)?;
    let approximate = match scheme {
        Scheme::WaitForAll => Some(age_wait_for_all_approx(lambda, shift, n)?),
        Scheme::EarliestK => {
            let alpha = a.threshold.alpha.unwrap_or(k as f64 / n as f64);
            if alpha < 1.0 {
                Some(age_earliest_k_approx(lambda, shift, alpha)?)
            } else {
                None
            }
        }
        Scheme::PreselectedK => Some(age_preselected_k_approx(lambda, shift, n, k)?),
    };
    let renewal = match scheme {
        Scheme::PreselectedK => Some(age_preselected_k_renewal(lambda, shift, n, k)?),
        _ => None,
    };
    let analysis = Analysis {
        scheme,
        lambda,
        shift,
        n,
        k,
        exact,
        approximate,
        renewal,
    };
    let text = match a.out.format.unwrap_or(Format::Human) {
        Format::Human => analysis.human(),
        Format::Csv => analysis.csv(),
        Format::Json => render::json(&analysis.json())?,
    };
    render::emit(a.out.output.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(a: SimulateArgs) -> Outcome {
    let scheme = Scheme::from(a.scheme);
    let (n, k) = resolve_threshold(scheme, &a.threshold)?;
    let model = match a.hyperexp {
        Some(model) => model,
        None => DelayModel::shifted_exponential(a.link.lambda, a.link.shift)?,
    };
    let config = SimConfig {
        n,
        policy: StoppingPolicy::from_scheme(scheme, k, a.regroup.into()),
        model: model.clone(),
        updates: a.effort.updates.unwrap_or(1_000_000),
        warmup: a.effort.warmup.unwrap_or(DEFAULT_WARMUP),
        seed: a.effort.seed.unwrap_or(0),
        replications: a.effort.replications.unwrap_or(1) as usize,
    };
    config.validate()?;
    if a.trace.is_some() && config.replications > 1 {
        return usage(
            "--trace records a single run; it cannot be combined with --replications above 1",
        );
    }
    let result = match &a.trace {
        Some(path) => simulate_traced(&config, BufWriter::new(File::create(path)?))?,
        None => replicate(&config)?,
    };
    let shifted = model.as_shifted_exponential();
    let exact_age = shifted
        .map(|(lambda, shift)| age_exact(scheme, lambda, shift, n, k).map(|r| r.total))
        .transpose()?;
    let renewal_age = match (shifted, scheme) {
        (Some((lambda, shift)), Scheme::PreselectedK) => {
            Some(age_preselected_k_renewal(lambda, shift, n, k)?.total)
        }
        _ => None,
    };
    let sim = Simulation {
        config: &config,
        result: &result,
        exact_age,
        renewal_age,
    };
    let text = match a.out.format.unwrap_or(Format::Human) {
        Format::Human => sim.human(),
        Format::Csv => sim.csv(),
        Format::Json => render::json(&sim.json())?,
    };
    render::emit(a.out.output.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn optimize(a: OptimizeArgs) -> Outcome {
    let n = a.n as usize;
    let (lambda, shift) = (a.link.lambda, a.link.shift);
    let alpha_star = optimal_alpha(lambda, shift)?;
    let k_closed = optimal_k_closed_form(lambda, shift, n)?;
    let (k_exhaustive, age_exhaustive) = optimal_k_exact(lambda, shift, n)?;
    let optimum = Optimum {
        lambda,
        shift,
        n,
        alpha_star,
        k_closed,
        age_closed: age_exact(Scheme::EarliestK, lambda, shift, n, k_closed)?.total,
        approx_at_alpha_star: if alpha_star > 0.0 {
            Some(age_earliest_k_approx(lambda, shift, alpha_star)?.total)
        } else {
            None
        },
        k_exhaustive,
        age_exhaustive: age_exhaustive.total,
    };
    let text = match a.out.format.unwrap_or(Format::Human) {
        Format::Human => optimum.human(),
        Format::Csv => optimum.csv(),
        Format::Json => render::json(&optimum.json())?,
    };
    render::emit(a.out.output.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn settings(effort: &EffortArgs) -> SimSettings {
    let base = SimSettings::default();
    SimSettings {
        updates: effort.updates.unwrap_or(base.updates),
        warmup: effort.warmup.unwrap_or(base.warmup),
        seed: effort.seed.unwrap_or(base.seed),
        replications: effort
            .replications
            .map_or(base.replications, |r| r as usize),
    }
}

fn reject(figure: &str, flags: &[(&str, bool)]) -> Result<(), Failure> {
    match flags.iter().find(|(_, present)| *present) {
        Some((flag, _)) => usage(format!("{flag} does not apply to {figure}")),
        None => Ok(()),
    }
}

fn experiment(a: ExperimentArgs) -> Outcome {
    let settings = settings(&a.effort);
    let table = match a.figure {
        Figure::Fig4 => {
            reject(
                "fig4",
                &[
                    ("--lambda", !a.lambda.is_empty()),
                    ("--shift", a.shift.is_some()),
                    ("--regroup", a.regroup.is_some()),
                    ("--analytic-only", a.analytic_only),
                ],
            )?;
            let base = Fig4Options::default();
            run_fig4(&Fig4Options {
                n: a.n.map_or(base.n, |n| n as usize),
                step: a.step.map_or(base.step, |s| s as usize),
                settings,
            })?
        }
        Figure::Fig5 => {
            reject("fig5", &[("--analytic-only", a.analytic_only)])?;
            let base = Fig5Options::default();
            run_fig5(&Fig5Options {
                n: a.n.map_or(base.n, |n| n as usize),
                shift: a.shift.unwrap_or(base.shift),
                lambdas: if a.lambda.is_empty() {
                    base.lambdas
                } else {
                    a.lambda
                },
                step: a.step.map_or(base.step, |s| s as usize),
                settings,
                regroup: a.regroup.map_or(base.regroup, Into::into),
            })?
        }
        Figure::Fig6 => {
            reject(
                "fig6",
                &[
                    ("--step", a.step.is_some()),
                    ("--regroup", a.regroup.is_some()),
                ],
            )?;
            if a.lambda.len() > 1 {
                return usage("fig6 takes a single --lambda");
            }
            let base = Fig6Options::default();
            run_fig6(&Fig6Options {
                lambda: a.lambda.first().copied().unwrap_or(base.lambda),
                shift: a.shift.unwrap_or(base.shift),
                n_range: a.n.map_or(base.n_range, |n| (1..=n as usize).collect()),
                settings,
                analytic_only: a.analytic_only,
            })?
        }
    };
    let text = match a.out.format.unwrap_or(Format::Csv) {
        Format::Csv => table.to_csv_string()?,
        Format::Json => {
            let mut buf = Vec::new();
            table.write_json(&mut buf)?;
            String::from_utf8(buf).expect("json output is utf-8")
        }
        Format::Human => render::table_human(&table),
    };
    render::emit(a.out.output.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn validate(a: ValidateArgs) -> Outcome {
    let base = ValidationSpec::default();
    let spec = ValidationSpec {
        full_threshold_only: a.full_threshold_only,
        updates: a.updates.unwrap_or(base.updates),
        warmup: a.warmup.unwrap_or(base.warmup),
        seed: a.seed.unwrap_or(base.seed),
        reference: a.reference.into(),
        sigma_limit: a.sigma,
        ..base
    };
    let report = run_validation(&spec)?;
    let text = match a.out.format.unwrap_or(Format::Human) {
        Format::Human => render::validation_human(&report),
        Format::Csv => render::validation_csv(&report),
        Format::Json => render::json(&serde_json::to_value(&report)?)?,
    };
    render::emit(a.out.output.as_deref(), &text)?;
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
