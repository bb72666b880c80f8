use std::fmt::Write as _;
use std::path::Path;

use aoi_core::experiments::{SweepTable, ValidationReport, CSV_HEADER};
use aoi_core::{AgeResult, Error, Scheme, SimConfig, SimResult};
use serde_json::{json, Value};

pub fn emit(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(path) => std::fs::write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn json(value: &Value) -> Result<String, Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    writeln!(out, "{key:<30} {value}").unwrap();
}

fn breakdown(out: &mut String, heading: &str, result: &AgeResult) {
    line(out, heading, result.total);
    for c in &result.components {
        line(out, &format!("  {}", c.label), c.value);
    }
}

pub struct Analysis {
    pub scheme: Scheme,
    pub lambda: f64,
    pub shift: f64,
    pub n: usize,
    pub k: usize,
    pub exact: AgeResult,
    pub approximate: Option<AgeResult>,
    pub renewal: Option<AgeResult>,
}

impl Analysis {
    fn results(&self) -> Vec<(&'static str, &AgeResult)> {
        let mut all = vec![("exact", &self.exact)];
        all.extend(self.approximate.as_ref().map(|r| ("approximate", r)));
        all.extend(self.renewal.as_ref().map(|r| ("renewal", r)));
        all
    }

    pub fn human(&self) -> String {
        let mut out = String::new();
        line(&mut out, "scheme", self.scheme);
        line(&mut out, "lambda", self.lambda);
        line(&mut out, "shift", self.shift);
        line(&mut out, "n", self.n);
        line(&mut out, "k", self.k);
        breakdown(&mut out, "exact age", &self.exact);
        if let Some(approx) = &self.approximate {
            let heading = match approx.params.alpha {
                Some(alpha) => format!("approximate age (alpha {alpha})"),
                None => "approximate age".to_string(),
            };
            breakdown(&mut out, &heading, approx);
        }
        if let Some(renewal) = &self.renewal {
            breakdown(&mut out, "renewal-reward age", renewal);
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("result,component,label,value\n");
        for (name, result) in self.results() {
            writeln!(out, "{name},total,,{}", result.total).unwrap();
            for c in &result.components {
                writeln!(out, "{name},{},{},{}", c.name, c.label, c.value).unwrap();
            }
        }
        out
    }

    pub fn json(&self) -> Value {
        json!({
            "scheme": self.scheme,
            "lambda": self.lambda,
            "shift": self.shift,
            "n": self.n,
            "k": self.k,
            "exact": self.exact,
            "approximate": self.approximate,
            "renewal": self.renewal,
        })
    }
}

pub struct Simulation<'a> {
    pub config: &'a SimConfig,
    pub result: &'a SimResult,
    pub exact_age: Option<f64>,
    pub renewal_age: Option<f64>,
}

impl Simulation<'_> {
    pub fn human(&self) -> String {
        let (c, r) = (self.config, self.result);
        let mut out = String::new();
        line(&mut out, "scheme", c.policy.scheme());
        line(&mut out, "model", &c.model);
        line(&mut out, "n", c.n);
        line(&mut out, "k", c.policy.threshold(c.n));
        line(&mut out, "updates", c.updates);
        line(&mut out, "warmup", c.warmup);
        line(&mut out, "seed", c.seed);
        line(&mut out, "replications", c.replications);
        line(&mut out, "average age", r.grand_mean);
        line(
            &mut out,
            "standard error",
            r.std_error
                .map_or_else(|| "n/a".to_string(), |s| s.to_string()),
        );
        if let Some(exact) = self.exact_age {
            line(&mut out, "exact age", exact);
        }
        if let Some(renewal) = self.renewal_age {
            line(&mut out, "renewal-reward age", renewal);
        }
        let lo = r
            .per_node_avg_age
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = r
            .per_node_avg_age
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        line(&mut out, "node age range", format!("{lo} .. {hi}"));
        line(&mut out, "measured rounds", r.rounds);
        line(&mut out, "measured time", r.virtual_time);
        out
    }

    pub fn csv(&self) -> String {
        let (c, r) = (self.config, self.result);
        let mut out = String::from(
            "scheme,model,n,k,updates,warmup,seed,replications,sim_age,sim_stderr,exact_age,renewal_age\n",
        );
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.policy.scheme(),
            c.model,
            c.n,
            c.policy.threshold(c.n),
            c.updates,
            c.warmup,
            c.seed,
            c.replications,
            r.grand_mean,
            opt(r.std_error),
            opt(self.exact_age),
            opt(self.renewal_age),
        )
        .unwrap();
        out
    }

    pub fn json(&self) -> Value {
        let c = self.config;
        json!({
            "scheme": c.policy.scheme(),
            "policy": c.policy,
            "model": c.model.to_string(),
            "n": c.n,
            "k": c.policy.threshold(c.n),
            "updates": c.updates,
            "warmup": c.warmup,
            "seed": c.seed,
            "replications": c.replications,
            "result": self.result,
            "exact_age": self.exact_age,
            "renewal_age": self.renewal_age,
        })
    }
}

pub struct Optimum {
    pub lambda: f64,
    pub shift: f64,
    pub n: usize,
    pub alpha_star: f64,
    pub k_closed: usize,
    pub age_closed: f64,
    pub approx_at_alpha_star: Option<f64>,
    pub k_exhaustive: usize,
    pub age_exhaustive: f64,
}

impl Optimum {
    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lambda", self.lambda.to_string()),
            ("shift", self.shift.to_string()),
            ("n", self.n.to_string()),
            ("alpha_star", self.alpha_star.to_string()),
            ("k_star_closed_form", self.k_closed.to_string()),
            ("age_at_closed_form_k_star", self.age_closed.to_string()),
            ("approx_age_at_alpha_star", opt(self.approx_at_alpha_star)),
            ("k_star_exhaustive", self.k_exhaustive.to_string()),
            ("age_at_exhaustive_k_star", self.age_exhaustive.to_string()),
        ]
    }

    pub fn human(&self) -> String {
        let mut out = String::new();
        line(&mut out, "lambda", self.lambda);
        line(&mut out, "shift", self.shift);
        line(&mut out, "n", self.n);
        line(&mut out, "alpha*", self.alpha_star);
        line(&mut out, "k* (closed form)", self.k_closed);
        line(&mut out, "exact age at closed-form k*", self.age_closed);
        line(
            &mut out,
            "approximate age at alpha*",
            self.approx_at_alpha_star
                .map_or_else(|| "n/a".to_string(), |v| v.to_string()),
        );
        line(&mut out, "k* (exhaustive)", self.k_exhaustive);
        line(&mut out, "exact age at exhaustive k*", self.age_exhaustive);
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("quantity,value\n");
        for (name, value) in self.fields() {
            writeln!(out, "{name},{value}").unwrap();
        }
        out
    }

    pub fn json(&self) -> Value {
        json!({
            "lambda": self.lambda,
            "shift": self.shift,
            "n": self.n,
            "alpha_star": self.alpha_star,
            "k_star_closed_form": self.k_closed,
            "age_at_closed_form_k_star": self.age_closed,
            "approx_age_at_alpha_star": self.approx_at_alpha_star,
            "k_star_exhaustive": self.k_exhaustive,
            "age_at_exhaustive_k_star": self.age_exhaustive,
        })
    }
}

fn aligned(rows: &[Vec<String>]) -> String {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..width)
        .map(|i| {
            rows.iter()
                .filter_map(|r| r.get(i))
                .map(|c| c.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
    }
    out
}

pub fn table_human(table: &SweepTable) -> String {
    let mut rows = vec![CSV_HEADER.iter().map(|h| h.to_string()).collect::<Vec<_>>()];
    for r in &table.rows {
        rows.push(vec![
            r.scheme.to_string(),
            r.model.clone(),
            opt(r.lambda),
            opt(r.shift),
            r.n.to_string(),
            r.k.to_string(),
            opt(r.sim_age),
            opt(r.sim_stderr),
            opt(r.exact_age),
            opt(r.approx_age),
            if r.kstar_flag {
                "*".into()
            } else {
                String::new()
            },
        ]);
    }
    let mut out = aligned(&rows);
    if !table.markers.is_empty() {
        out.push('\n');
        let mut marks = vec![vec![
            "lambda".to_string(),
            "shift".to_string(),
            "n".to_string(),
            "alpha_star".to_string(),
            "k_star".to_string(),
            "approx_age_at_alpha_star".to_string(),
        ]];
        for m in &table.markers {
            marks.push(vec![
                m.lambda.to_string(),
                m.shift.to_string(),
                m.n.to_string(),
                m.alpha_star.to_string(),
                m.k_star.to_string(),
                opt(m.approx_age_at_alpha_star),
            ]);
        }
        out.push_str(&aligned(&marks));
    }
    out
}

const VALIDATION_HEADER: &str =
    "scheme,lambda,shift,n,k,simulated,std_error,expected,z,relative_error,pass";

pub fn validation_csv(report: &ValidationReport) -> String {
    let mut out = format!("{VALIDATION_HEADER}\n");
    for c in &report.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.scheme,
            c.lambda,
            c.shift,
            c.n,
            c.k,
            c.simulated,
            c.std_error,
            c.expected,
            c.z,
            c.relative_error,
            c.pass
        )
        .unwrap();
    }
    out
}

pub fn validation_human(report: &ValidationReport) -> String {
    let mut rows = vec![VALIDATION_HEADER
        .split(',')
        .map(String::from)
        .collect::<Vec<_>>()];
    for c in &report.cells {
        rows.push(vec![
            c.scheme.to_string(),
            c.lambda.to_string(),
            c.shift.to_string(),
            c.n.to_string(),
            c.k.to_string(),
            format!("{:.6}", c.simulated),
            format!("{:.6}", c.std_error),
            format!("{:.6}", c.expected),
            format!("{:.2}", c.z),
            format!("{:.4}", c.relative_error),
            if c.pass { "PASS" } else { "FAIL" }.to_string(),
        ]);
    }
    let mut out = aligned(&rows);
    let failed = report.failures().count();
    writeln!(
        out,
        "\nreference {}, |z| limit {}: {} of {} cells passed",
        report.reference,
        report.sigma_limit,
        report.cells.len() - failed,
        report.cells.len()
    )
    .unwrap();
    out
}
