//! Parameter sweeps that regenerate the threshold and scaling tables, and
//! the simulation-versus-closed-form validation grid.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{
    age_earliest_k, age_earliest_k_approx, age_exact, age_preselected_k_approx,
    age_preselected_k_renewal, age_wait_for_all_approx, optimal_alpha, optimal_k_closed_form,
    Scheme,
};
use crate::delay::DelayModel;
use crate::error::{Error, Result};
use crate::sim::{replicate, Regroup, SimConfig, StoppingPolicy, DEFAULT_WARMUP};

/// Simulation effort per sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSettings {
    pub updates: u64,
    pub warmup: u64,
    pub seed: u64,
    pub replications: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            updates: 1_000_000,
            warmup: DEFAULT_WARMUP,
            seed: 1,
            replications: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepVariable {
    /// Sweep the threshold at a fixed number of nodes.
    K { n: usize },
    /// Sweep the number of nodes; the threshold follows `round(alpha* n)`.
    N,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub range: Vec<usize>,
    pub models: Vec<DelayModel>,
    pub schemes: Vec<Scheme>,
    pub regroup: Regroup,
    pub settings: SimSettings,
    /// Skip simulation and only tabulate closed forms.
    pub analytic_only: bool,
    pub output: Option<PathBuf>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.range.is_empty() {
            return Err(Error::InvalidSweep("range is empty".into()));
        }
        if self.range.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSweep(
                "range must be strictly increasing".into(),
            ));
        }
        if self.models.is_empty() || self.schemes.is_empty() {
            return Err(Error::InvalidSweep(
                "need at least one model and one scheme".into(),
            ));
        }
        let first = self.range[0];
        let last = *self.range.last().expect("non-empty");
        match self.variable {
            SweepVariable::K { n } if first < 1 || last > n => Err(Error::InvalidSweep(format!(
                "k range [{first}, {last}] is outside [1, {n}]"
            ))),
            SweepVariable::N if first < 1 => {
                Err(Error::InvalidSweep("n must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub model: String,
    pub lambda: Option<f64>,
    pub shift: Option<f64>,
    pub n: usize,
    pub k: usize,
    pub sim_age: Option<f64>,
    pub sim_stderr: Option<f64>,
    pub exact_age: Option<f64>,
    pub approx_age: Option<f64>,
    pub kstar_flag: bool,
}

/// Closed-form optimum for one `(lambda, shift, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdMarker {
    pub lambda: f64,
    pub shift: f64,
    pub n: usize,
    pub alpha_star: f64,
    pub k_star: usize,
    /// Approximate age at `alpha_star`; absent when `alpha_star = 0`.
    pub approx_age_at_alpha_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub name: String,
    pub rows: Vec<SweepRow>,
    pub markers: Vec<ThresholdMarker>,
}

pub const CSV_HEADER: [&str; 11] = [
    "scheme",
    "model",
    "lambda",
    "shift",
    "n",
    "k",
    "sim_age",
    "sim_stderr",
    "exact_age",
    "approx_age",
    "kstar_flag",
];

fn opt(value: Option<impl ToString>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepTable {
    /// CSV with one header row; missing values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(CSV_HEADER)?;
        for row in &self.rows {
            writer.write_record([
                row.scheme.to_string(),
                row.model.clone(),
                opt(row.lambda),
                opt(row.shift),
                row.n.to_string(),
                row.k.to_string(),
                opt(row.sim_age),
                opt(row.sim_stderr),
                opt(row.exact_age),
                opt(row.approx_age),
                row.kstar_flag.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }

    pub fn row(&self, scheme: Scheme, model: &str, n: usize, k: usize) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.model == model && r.n == n && r.k == k)
    }
}

struct Job<'a> {
    scheme: Scheme,
    model: &'a DelayModel,
    n: usize,
    k: usize,
}

/// Evaluates every `(model, scheme, range value)` point of `spec`.
/// Rows come back sorted by `(scheme, model, n, k)`.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for model in &spec.models {
        for &scheme in &spec.schemes {
            for &value in &spec.range {
                let (n, k) = match spec.variable {
                    SweepVariable::K { n } => (n, value),
                    SweepVariable::N => (value, threshold_for(model, value)?),
                };
                let k = if scheme == Scheme::WaitForAll { n } else { k };
                jobs.push(Job {
                    scheme,
                    model,
                    n,
                    k,
                });
            }
        }
    }
    let rows: Vec<Result<SweepRow>> = jobs.par_iter().map(|job| evaluate(job, spec)).collect();
    let mut rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (a.scheme, &a.model, a.n, a.k).cmp(&(b.scheme, &b.model, b.n, b.k)));
    rows.dedup_by(|a, b| a.scheme == b.scheme && a.model == b.model && a.n == b.n && a.k == b.k);
    Ok(rows)
}

fn threshold_for(model: &DelayModel, n: usize) -> Result<usize> {
    match model.as_shifted_exponential() {
        Some((lambda, shift)) => optimal_k_closed_form(lambda, shift, n),
        None => Ok(1),
    }
}

fn evaluate(job: &Job<'_>, spec: &SweepSpec) -> Result<SweepRow> {
    let Job {
        scheme,
        model,
        n,
        k,
    } = *job;
    let (sim_age, sim_stderr) = if spec.analytic_only {
        (None, None)
    } else {
        let policy = StoppingPolicy::from_scheme(scheme, k, spec.regroup);
        let config = SimConfig {
            n,
            policy,
            model: model.clone(),
            updates: spec.settings.updates,
            warmup: spec.settings.warmup,
            seed: spec.settings.seed,
            replications: spec.settings.replications,
        };
        let result = replicate(&config)?;
        (Some(result.grand_mean), result.std_error)
    };
    let shifted = model.as_shifted_exponential();
    let (exact_age, approx_age, kstar_flag) = match shifted {
        Some((lambda, shift)) => {
            let exact = age_exact(scheme, lambda, shift, n, k)?.total;
            let approx = match scheme {
                Scheme::WaitForAll => Some(age_wait_for_all_approx(lambda, shift, n)?.total),
                Scheme::EarliestK if k < n => {
                    Some(age_earliest_k_approx(lambda, shift, k as f64 / n as f64)?.total)
                }
                Scheme::EarliestK => None,
                Scheme::PreselectedK => Some(age_preselected_k_approx(lambda, shift, n, k)?.total),
            };
            let flag =
                scheme != Scheme::WaitForAll && optimal_k_closed_form(lambda, shift, n)? == k;
            (Some(exact), approx, flag)
        }
        None => (None, None, false),
    };
    Ok(SweepRow {
        scheme,
        model: model.to_string(),
        lambda: shifted.map(|(l, _)| l),
        shift: shifted.map(|(_, c)| c),
        n,
        k,
        sim_age,
        sim_stderr,
        exact_age,
        approx_age,
        kstar_flag,
    })
}

fn marker(lambda: f64, shift: f64, n: usize) -> Result<ThresholdMarker> {
    let alpha_star = optimal_alpha(lambda, shift)?;
    let approx = if alpha_star > 0.0 {
        Some(age_earliest_k_approx(lambda, shift, alpha_star)?.total)
    } else {
        None
    };
    Ok(ThresholdMarker {
        lambda,
        shift,
        n,
        alpha_star,
        k_star: optimal_k_closed_form(lambda, shift, n)?,
        approx_age_at_alpha_star: approx,
    })
}

/// `1, step, 2 step, ..., n` plus any `extra` values inside `[1, n]`.
pub fn k_grid(n: usize, step: usize, extra: &[usize]) -> Vec<usize> {
    let step = step.max(1);
    let mut ks: Vec<usize> = std::iter::once(1)
        .chain((step..=n).step_by(step))
        .chain(std::iter::once(n))
        .chain(extra.iter().copied().filter(|&k| (1..=n).contains(&k)))
        .collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

#[derive(Debug, Clone)]
pub struct Fig4Options {
    pub n: usize,
    pub step: usize,
    pub settings: SimSettings,
}

impl Default for Fig4Options {
    fn default() -> Self {
        Self {
            n: 100,
            step: 5,
            settings: SimSettings::default(),
        }
    }
}

/// Exponential (rate 2) versus a hyper-exponential with the same mean,
/// earliest-k swept over k.
pub fn run_fig4(opts: &Fig4Options) -> Result<SweepTable> {
    let models = vec![
        DelayModel::exponential(2.0)?,
        DelayModel::hyper_exponential(vec![1.0, 6.0], vec![0.4, 0.6])?,
    ];
    let spec = SweepSpec {
        variable: SweepVariable::K { n: opts.n },
        range: k_grid(opts.n, opts.step, &[]),
        models,
        schemes: vec![Scheme::EarliestK],
        regroup: Regroup::PerUpdate,
        settings: opts.settings,
        analytic_only: false,
        output: None,
    };
    Ok(SweepTable {
        name: "fig4".into(),
        rows: run_sweep(&spec)?,
        markers: Vec::new(),
    })
}

#[derive(Debug, Clone)]
pub struct Fig5Options {
    pub n: usize,
    pub shift: f64,
    pub lambdas: Vec<f64>,
    pub step: usize,
    pub settings: SimSettings,
    pub regroup: Regroup,
}

impl Default for Fig5Options {
    fn default() -> Self {
        Self {
            n: 100,
            shift: 1.0,
            lambdas: vec![0.5, 1.0, 2.0],
            step: 5,
            settings: SimSettings::default(),
            regroup: Regroup::PerUpdate,
        }
    }
}

/// Earliest-k against pre-selected-k for shifted exponential links.
pub fn run_fig5(opts: &Fig5Options) -> Result<SweepTable> {
    let mut rows = Vec::new();
    let mut markers = Vec::new();
    for &lambda in &opts.lambdas {
        let mark = marker(lambda, opts.shift, opts.n)?;
        let spec = SweepSpec {
            variable: SweepVariable::K { n: opts.n },
            range: k_grid(opts.n, opts.step, &[mark.k_star]),
            models: vec![DelayModel::shifted_exponential(lambda, opts.shift)?],
            schemes: vec![Scheme::EarliestK, Scheme::PreselectedK],
            regroup: opts.regroup,
            settings: opts.settings,
            analytic_only: false,
            output: None,
        };
        rows.extend(run_sweep(&spec)?);
        markers.push(mark);
    }
    rows.sort_by(|a, b| (a.scheme, &a.model, a.n, a.k).cmp(&(b.scheme, &b.model, b.n, b.k)));
    Ok(SweepTable {
        name: "fig5".into(),
        rows,
        markers,
    })
}

#[derive(Debug, Clone)]
pub struct Fig6Options {
    pub lambda: f64,
    pub shift: f64,
    pub n_range: Vec<usize>,
    pub settings: SimSettings,
    pub analytic_only: bool,
}

impl Default for Fig6Options {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            shift: 1.0,
            n_range: (1..=200).collect(),
            settings: SimSettings::default(),
            analytic_only: false,
        }
    }
}

/// Age at the closed-form threshold `k*(n)` as the number of nodes grows.
pub fn run_fig6(opts: &Fig6Options) -> Result<SweepTable> {
    let spec = SweepSpec {
        variable: SweepVariable::N,
        range: opts.n_range.clone(),
        models: vec![DelayModel::shifted_exponential(opts.lambda, opts.shift)?],
        schemes: vec![Scheme::EarliestK],
        regroup: Regroup::PerUpdate,
        settings: opts.settings,
        analytic_only: opts.analytic_only,
        output: None,
    };
    let rows = run_sweep(&spec)?;
    let markers = opts
        .n_range
        .iter()
        .map(|&n| marker(opts.lambda, opts.shift, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        name: "fig6".into(),
        rows,
        markers,
    })
}

/// Which closed form a simulated pre-selected-k cell is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// The published closed forms for all three schemes.
    ClosedForm,
    /// The published forms for wait-for-all and earliest-k, and the
    /// renewal-reward expression for pre-selected-k.
    Renewal,
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reference::ClosedForm => "closed-form",
            Reference::Renewal => "renewal",
        })
    }
}

impl Reference {
    pub fn age(self, scheme: Scheme, lambda: f64, shift: f64, n: usize, k: usize) -> Result<f64> {
        Ok(match (self, scheme) {
            (Reference::Renewal, Scheme::PreselectedK) => {
                age_preselected_k_renewal(lambda, shift, n, k)?.total
            }
            _ => age_exact(scheme, lambda, shift, n, k)?.total,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ValidationSpec {
    pub rates_and_shifts: Vec<(f64, f64)>,
    pub node_counts: Vec<usize>,
    pub schemes: Vec<Scheme>,
    /// Restrict every scheme to `k = n`.
    pub full_threshold_only: bool,
    pub updates: u64,
    pub warmup: u64,
    pub seed: u64,
    pub reference: Reference,
    /// A cell passes when `|z|` is at most this...
    pub sigma_limit: f64,
    /// ...or when its relative error is at most this.
    pub relative_limit: f64,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        Self {
            rates_and_shifts: vec![(1.0, 0.0), (1.0, 1.0), (2.0, 0.0), (2.0, 1.0)],
            node_counts: vec![1, 2, 5, 10],
            schemes: Scheme::ALL.to_vec(),
            full_threshold_only: false,
            updates: 100_000,
            warmup: DEFAULT_WARMUP,
            seed: 1,
            reference: Reference::ClosedForm,
            sigma_limit: 4.0,
            relative_limit: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationCell {
    pub scheme: Scheme,
    pub lambda: f64,
    pub shift: f64,
    pub n: usize,
    pub k: usize,
    pub simulated: f64,
    pub std_error: f64,
    pub expected: f64,
    pub z: f64,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub reference: Reference,
    pub sigma_limit: f64,
    pub relative_limit: f64,
    pub cells: Vec<ValidationCell>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &ValidationCell> {
        self.cells.iter().filter(|c| !c.pass)
    }
}

/// Thresholds `{1, ceil(n/2), n}` without duplicates.
pub fn grid_thresholds(n: usize) -> Vec<usize> {
    let mut ks = vec![1, n.div_ceil(2), n];
    ks.dedup();
    ks
}

/// `(scheme, lambda, shift, n, k)` cells of a validation grid.
pub fn validation_cells(spec: &ValidationSpec) -> Vec<(Scheme, f64, f64, usize, usize)> {
    let mut cells = Vec::new();
    for &scheme in &spec.schemes {
        for &(lambda, shift) in &spec.rates_and_shifts {
            for &n in &spec.node_counts {
                let ks = if scheme == Scheme::WaitForAll || spec.full_threshold_only {
                    vec![n]
                } else {
                    grid_thresholds(n)
                };
                for k in ks {
                    cells.push((scheme, lambda, shift, n, k));
                }
            }
        }
    }
    cells
}

/// Runs the grid against `spec.reference`.
pub fn run_validation(spec: &ValidationSpec) -> Result<ValidationReport> {
    let reference = spec.reference;
    run_validation_with(spec, |scheme, lambda, shift, n, k| {
        reference.age(scheme, lambda, shift, n, k)
    })
}

/// Runs the grid against an arbitrary reference formula.
pub fn run_validation_with<F>(spec: &ValidationSpec, expected_age: F) -> Result<ValidationReport>
where
    F: Fn(Scheme, f64, f64, usize, usize) -> Result<f64> + Sync,
{
    let cells = validation_cells(spec);
    let results: Vec<Result<ValidationCell>> = cells
        .par_iter()
        .map(|&(scheme, lambda, shift, n, k)| {
            let config = SimConfig {
                n,
                policy: StoppingPolicy::from_scheme(scheme, k, Regroup::PerUpdate),
                model: DelayModel::shifted_exponential(lambda, shift)?,
                updates: spec.updates,
                warmup: spec.warmup,
                seed: spec.seed,
                replications: 1,
            };
            let sim = replicate(&config)?;
            let expected = expected_age(scheme, lambda, shift, n, k)?;
            let std_error = sim.std_error.unwrap_or(f64::NAN);
            let z = (sim.grand_mean - expected) / std_error;
            let relative_error = (sim.grand_mean - expected).abs() / expected;
            Ok(ValidationCell {
                scheme,
                lambda,
                shift,
                n,
                k,
                simulated: sim.grand_mean,
                std_error,
                expected,
                z,
                relative_error,
                pass: z.abs() <= spec.sigma_limit || relative_error <= spec.relative_limit,
            })
        })
        .collect();
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport {
        reference: spec.reference,
        sigma_limit: spec.sigma_limit,
        relative_limit: spec.relative_limit,
        passed: cells.iter().all(|c| c.pass),
        cells,
    })
}

/// Exact earliest-k age at the closed-form threshold for each `n`.
pub fn exact_age_at_closed_form_threshold(lambda: f64, shift: f64, n: usize) -> Result<f64> {
    let k = optimal_k_closed_form(lambda, shift, n)?;
    Ok(age_earliest_k(lambda, shift, n, k)?.total)
}
