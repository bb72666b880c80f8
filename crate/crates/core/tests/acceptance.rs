//! Acceptance suite. Runs every criterion, prints one `[PASS]`/`[FAIL]`
//! line each, and exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use aoi_core::analytics::{
    age_earliest_k, age_earliest_k_approx, age_preselected_k, age_preselected_k_renewal,
    age_wait_for_all, optimal_alpha, optimal_k_closed_form,
};
use aoi_core::delay::{order_stat_mc_oracle, order_stat_moments, DelayModel, RandomStream};
use aoi_core::experiments::{
    grid_thresholds, k_grid, run_fig5, run_sweep, run_validation, Fig5Options, Reference,
    SimSettings, SweepSpec, SweepVariable, ValidationSpec,
};
use aoi_core::sim::{replicate, simulate_traced, Regroup, SimConfig, StoppingPolicy};
use aoi_core::Scheme;

const C1_REL_TOL: f64 = 1e-9;
const C1_BUDGET: Duration = Duration::from_secs(1);

const C2_ROUNDS: u64 = 1_000_000;
const C2_SIGMA: f64 = 3.0;
const C2_REL_TOL: f64 = 0.01;
const C2_BUDGET: Duration = Duration::from_secs(120);

const C3_ABS_TOL: f64 = 1e-10;

const C4_ALPHA: f64 = 0.6180;
const C4_ALPHA_TOL: f64 = 5e-5;
const C4_K_STAR: usize = 62;

const C5_ROUNDS: u64 = 100_000;
const C5_STEP: usize = 5;
const C5_SIGMA: f64 = 3.0;
const C5_BUDGET: Duration = Duration::from_secs(60);

const C6_REL_TOL: f64 = 0.05;

const C7_ROUNDS: u64 = 1_000_000;
const C7_SIGMA: f64 = 3.0;
const C7_BUDGET: Duration = Duration::from_secs(120);

const C8_SPREAD: f64 = 0.02;
const C8_SINGLE_NODE: f64 = 3.25;

const C9_SAMPLES: usize = 100_000;
const C9_SIGMA: f64 = 4.0;
const C9_BUDGET: Duration = Duration::from_secs(30);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(pass: bool, detail: String, elapsed: Duration, budget: Duration) -> Outcome {
    let in_time = elapsed < budget;
    let mut detail = format!(
        "{detail}; {:.2} s (budget {} s)",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    if !in_time {
        detail.push_str(" OVER BUDGET");
    }
    outcome(pass && in_time, detail)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn c1_scheme_coincidence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut cells = 0;
    for lambda in [0.5, 1.0, 2.0] {
        for shift in [0.0, 1.0] {
            for n in [1, 2, 5, 10, 50, 100] {
                let all = age_wait_for_all(lambda, shift, n).unwrap().total;
                let earliest = age_earliest_k(lambda, shift, n, n).unwrap().total;
                let pre = age_preselected_k(lambda, shift, n, n).unwrap().total;
                worst = worst.max(rel(earliest, all)).max(rel(pre, all));
                cells += 1;
            }
        }
    }
    timed(
        worst <= C1_REL_TOL,
        format!("{cells} cells, worst relative gap {worst:.3e} (tol {C1_REL_TOL:e})"),
        start.elapsed(),
        C1_BUDGET,
    )
}

fn c2_simulation_vs_theory() -> Outcome {
    let start = Instant::now();
    let spec = ValidationSpec {
        updates: C2_ROUNDS,
        seed: 2,
        reference: Reference::ClosedForm,
        sigma_limit: C2_SIGMA,
        relative_limit: C2_REL_TOL,
        ..ValidationSpec::default()
    };
    let report = run_validation(&spec).unwrap();
    let failures: Vec<_> = report.failures().collect();
    for cell in &failures {
        let renewal = age_preselected_k_renewal(cell.lambda, cell.shift, cell.n, cell.k)
            .map(|r| r.total)
            .unwrap_or(f64::NAN);
        let renewal_z = (cell.simulated - renewal) / cell.std_error;
        println!(
            "       {} lambda={} c={} n={} k={}: sim {:.5} +- {:.5}, closed form {:.5} (z {:.1}, rel {:.2}%), renewal {:.5} (z {:.1})",
            cell.scheme,
            cell.lambda,
            cell.shift,
            cell.n,
            cell.k,
            cell.simulated,
            cell.std_error,
            cell.expected,
            cell.z,
            100.0 * cell.relative_error,
            renewal,
            renewal_z,
        );
    }
    let worst_z = report.cells.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    timed(
        report.passed,
        format!(
            "{}/{} cells within max({C2_SIGMA} sigma, {}%) at {C2_ROUNDS} rounds, worst |z| {worst_z:.1}",
            report.cells.len() - failures.len(),
            report.cells.len(),
            100.0 * C2_REL_TOL,
        ),
        start.elapsed(),
        C2_BUDGET,
    )
}

fn c3_point_values() -> Outcome {
    let checks = [
        (
            "earliest-k(1,0,2,1)",
            age_earliest_k(1.0, 0.0, 2, 1).unwrap().total,
            1.5,
        ),
        (
            "pre-selected-k(1,0,2,1)",
            age_preselected_k(1.0, 0.0, 2, 1).unwrap().total,
            25.0 / 12.0,
        ),
        (
            "wait-for-all(1,1,1)",
            age_wait_for_all(1.0, 1.0, 1).unwrap().total,
            3.25,
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, got, want) in checks {
        let err = (got - want).abs();
        pass &= err <= C3_ABS_TOL;
        parts.push(format!("{name} = {got} (err {err:.1e})"));
    }
    outcome(pass, parts.join(", "))
}

fn c4_threshold() -> Outcome {
    let alpha = optimal_alpha(1.0, 0.5).unwrap();
    let k = optimal_k_closed_form(1.0, 0.5, 100).unwrap();
    outcome(
        (alpha - C4_ALPHA).abs() <= C4_ALPHA_TOL && k == C4_K_STAR && k > 60,
        format!("alpha* = {alpha:.6}, k* = {k} at n = 100"),
    )
}

fn c5_monotone_in_k() -> Outcome {
    let start = Instant::now();
    let (lambda, n) = (2.0, 100);
    let exact: Vec<f64> = (1..=n)
        .map(|k| age_earliest_k(lambda, 0.0, n, k).unwrap().total)
        .collect();
    let exact_ok = exact.windows(2).all(|w| w[1] > w[0]);

    let spec = SweepSpec {
        variable: SweepVariable::K { n },
        range: k_grid(n, C5_STEP, &[]),
        models: vec![DelayModel::exponential(lambda).unwrap()],
        schemes: vec![Scheme::EarliestK],
        regroup: Regroup::PerUpdate,
        settings: SimSettings {
            updates: C5_ROUNDS,
            warmup: 1_000,
            seed: 5,
            replications: 1,
        },
        analytic_only: false,
        output: None,
    };
    let rows = run_sweep(&spec).unwrap();
    let mut worst_drop = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let se = a.sim_stderr.unwrap().hypot(b.sim_stderr.unwrap());
        worst_drop = worst_drop.max((a.sim_age.unwrap() - b.sim_age.unwrap()) / se);
    }
    timed(
        exact_ok && worst_drop <= C5_SIGMA,
        format!(
            "exact strictly increasing over k = 1..{n}: {exact_ok}; {} simulated points, largest drop {worst_drop:.2} sigma",
            rows.len()
        ),
        start.elapsed(),
        C5_BUDGET,
    )
}

fn c6_approximation() -> Outcome {
    let (lambda, shift, n) = (1.0, 1.0, 100);
    let mut worst = (0.0_f64, 0);
    for k in 1..=95 {
        let exact = age_earliest_k(lambda, shift, n, k).unwrap().total;
        let approx = age_earliest_k_approx(lambda, shift, k as f64 / n as f64)
            .unwrap()
            .total;
        let err = rel(approx, exact);
        if err > worst.0 {
            worst = (err, k);
        }
    }
    outcome(
        worst.0 <= C6_REL_TOL,
        format!(
            "worst relative error {:.3}% at k = {}",
            100.0 * worst.0,
            worst.1
        ),
    )
}

fn c7_dominance() -> Outcome {
    let start = Instant::now();
    let (shift, n) = (1.0, 100);
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [0.5, 1.0, 2.0] {
        let k = optimal_k_closed_form(lambda, shift, n).unwrap();
        let model = DelayModel::shifted_exponential(lambda, shift).unwrap();
        let run = |policy| {
            let cfg = SimConfig::new(n, policy, model.clone())
                .with_updates(C7_ROUNDS)
                .with_seed(7);
            replicate(&cfg).unwrap()
        };
        let early = run(StoppingPolicy::EarliestK { k });
        let pre = run(StoppingPolicy::PreSelectedK {
            k,
            regroup: Regroup::PerUpdate,
        });
        let se = early.std_error.unwrap().hypot(pre.std_error.unwrap());
        let margin = (pre.grand_mean - early.grand_mean) / se;
        pass &= margin > C7_SIGMA;
        parts.push(format!(
            "lambda*c={} k*={k}: {:.4} vs {:.4} ({margin:.1} sigma)",
            lambda * shift,
            early.grand_mean,
            pre.grand_mean
        ));
    }
    timed(pass, parts.join("; "), start.elapsed(), C7_BUDGET)
}

fn c8_plateau() -> Outcome {
    let at_kstar = |n| {
        let k = optimal_k_closed_form(1.0, 1.0, n).unwrap();
        age_earliest_k(1.0, 1.0, n, k).unwrap().total
    };
    let values: Vec<f64> = [50, 100, 150, 200].into_iter().map(at_kstar).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / lo;
    let single = at_kstar(1);
    outcome(
        spread < C8_SPREAD && single == C8_SINGLE_NODE,
        format!(
            "ages at k*(n), n = 50/100/150/200: {:.4}/{:.4}/{:.4}/{:.4} (spread {:.3}%); n = 1 gives {single}",
            values[0],
            values[1],
            values[2],
            values[3],
            100.0 * spread
        ),
    )
}

fn c9_order_statistics() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut cells = 0;
    let mut failed = Vec::new();
    for lambda in [0.5, 1.0, 2.0] {
        for shift in [0.0, 1.0] {
            let model = DelayModel::shifted_exponential(lambda, shift).unwrap();
            for n in [1, 2, 5, 10, 100] {
                for k in grid_thresholds(n) {
                    let exact = order_stat_moments(lambda, shift, k, n).unwrap();
                    let mut stream = RandomStream::new(9, cells as u64);
                    let est = order_stat_mc_oracle(&model, k, n, C9_SAMPLES, &mut stream).unwrap();
                    let z_mean = (est.mean - exact.mean) / est.mean_stderr;
                    let z_var = (est.variance - exact.variance) / est.variance_stderr;
                    let z = z_mean.abs().max(z_var.abs());
                    if z > C9_SIGMA {
                        failed.push(format!(
                            "(lambda={lambda}, c={shift}, n={n}, k={k}, z={z:.1})"
                        ));
                    }
                    worst = worst.max(z);
                    cells += 1;
                }
            }
        }
    }
    let mut detail = format!(
        "{cells} cells at {C9_SAMPLES} samples, worst |z| over mean and variance {worst:.2}"
    );
    if !failed.is_empty() {
        detail.push_str(&format!("; failing {}", failed.join(" ")));
    }
    timed(failed.is_empty(), detail, start.elapsed(), C9_BUDGET)
}

fn c10_determinism() -> Outcome {
    let model = DelayModel::shifted_exponential(1.0, 0.5).unwrap();
    let trace = |seed| {
        let cfg = SimConfig::new(
            6,
            StoppingPolicy::PreSelectedK {
                k: 3,
                regroup: Regroup::PerUpdate,
            },
            model.clone(),
        )
        .with_updates(2_000)
        .with_warmup(50)
        .with_seed(seed);
        let mut buf = Vec::new();
        let result = simulate_traced(&cfg, &mut buf).unwrap();
        (buf, serde_json::to_string(&result).unwrap())
    };
    let replicated = |seed| {
        let cfg = SimConfig::new(8, StoppingPolicy::EarliestK { k: 5 }, model.clone())
            .with_updates(20_000)
            .with_seed(seed)
            .with_replications(4);
        serde_json::to_string(&replicate(&cfg).unwrap()).unwrap()
    };
    let experiment = || {
        let table = run_fig5(&Fig5Options {
            n: 20,
            lambdas: vec![1.0, 2.0],
            step: 4,
            settings: SimSettings {
                updates: 5_000,
                warmup: 100,
                seed: 11,
                replications: 2,
            },
            ..Fig5Options::default()
        })
        .unwrap();
        let mut json = Vec::new();
        table.write_json(&mut json).unwrap();
        (table.to_csv_string().unwrap(), json)
    };

    let same_trace = trace(3) == trace(3);
    let same_replicated = replicated(3) == replicated(3);
    let same_experiment = experiment() == experiment();
    let seed_matters = trace(3) != trace(4);
    outcome(
        same_trace && same_replicated && same_experiment && seed_matters,
        format!(
            "trace repeat identical: {same_trace}, replicated repeat identical: {same_replicated}, experiment repeat identical: {same_experiment}, different seed differs: {seed_matters}"
        ),
    )
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("C1", "scheme coincidence at k = n", c1_scheme_coincidence),
        ("C2", "simulation vs closed forms", c2_simulation_vs_theory),
        ("C3", "hand-derived point values", c3_point_values),
        ("C4", "optimal threshold at lambda*c = 0.5", c4_threshold),
        ("C5", "memoryless monotonicity in k", c5_monotone_in_k),
        ("C6", "approximation tightness", c6_approximation),
        ("C7", "earliest-k beats pre-selected-k at k*", c7_dominance),
        ("C8", "plateau in n", c8_plateau),
        (
            "C9",
            "order-statistic moments vs Monte Carlo",
            c9_order_statistics,
        ),
        ("C10", "determinism", c10_determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        let result = check();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id} {name}: {}", result.detail);
        if !result.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!(
            "acceptance: {} of 10 criteria failed: {}",
            failed.len(),
            failed.join(", ")
        );
        std::process::exit(1);
    }
}
