//! Closed-form average age at one receiver for the three stopping schemes,
//! their large-n approximations, and stopping-threshold optimization.
//!
//! All exact expressions assume zero-wait updating with instantaneous
//! acknowledgements. Exact forms sum harmonic numbers term by term; the
//! `*_approx` functions are the only place `ln` replaces them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::delay::{harmonic, harmonic2, order_stat_moments, partial_order_mean_sum, EULER_GAMMA};
use crate::error::{check_nodes, check_rate, check_shift, check_threshold, Error, Result};

/// Which acknowledgement set completes an update round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    WaitForAll,
    EarliestK,
    #[serde(rename = "pre-selected-k")]
    PreselectedK,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::WaitForAll, Scheme::EarliestK, Scheme::PreselectedK];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::WaitForAll => "wait-for-all",
            Scheme::EarliestK => "earliest-k",
            Scheme::PreselectedK => "pre-selected-k",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Exact,
    Approximate,
}

/// One additive term of an average age.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    /// Stable machine-readable key.
    pub name: &'static str,
    /// Label for human-readable output.
    pub label: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AgeParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl AgeParams {
    fn shifted(lambda: f64, shift: f64, n: usize, k: usize) -> Self {
        Self {
            lambda: Some(lambda),
            shift: Some(shift),
            n: Some(n),
            k: Some(k),
            alpha: None,
        }
    }
}

/// An average age with its additive breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeResult {
    pub total: f64,
    pub components: Vec<Component>,
    pub kind: Kind,
    pub scheme: Scheme,
    pub params: AgeParams,
}

impl AgeResult {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.value)
    }

    pub fn component_sum(&self) -> f64 {
        self.components.iter().map(|c| c.value).sum()
    }
}

const DELTA1: (&str, &str) = ("delta1", "δ₁ mean service time of a delivered update");
const INTERVAL: (&str, &str) = ("interval", "interval term");
const VARIANCE_RATIO: (&str, &str) = ("variance_ratio", "variance-ratio term");

fn comp((name, label): (&'static str, &'static str), value: f64) -> Component {
    Component { name, label, value }
}

/// Wait-for-all age for an arbitrary delay law, from `E[X]`, `E[Y]` and
/// `E[Y^2]` where `Y = X_{n:n}`: `E[X] + E[Y^2] / (2 E[Y])`.
pub fn age_wait_for_all_general(
    mean_x: f64,
    mean_y: f64,
    second_moment_y: f64,
) -> Result<AgeResult> {
    check_rate("mean_x", mean_x)?;
    check_rate("mean_y", mean_y)?;
    check_rate("second_moment_y", second_moment_y)?;
    let square = mean_y * mean_y;
    if second_moment_y < square * (1.0 - 1e-12) {
        return Err(Error::InconsistentMoments {
            mean: mean_y,
            second_moment: second_moment_y,
        });
    }
    let variance = (second_moment_y - square).max(0.0);
    Ok(AgeResult {
        total: mean_x + second_moment_y / (2.0 * mean_y),
        components: vec![
            comp(DELTA1, mean_x),
            comp(INTERVAL, mean_y / 2.0),
            comp(VARIANCE_RATIO, variance / (2.0 * mean_y)),
        ],
        kind: Kind::Exact,
        scheme: Scheme::WaitForAll,
        params: AgeParams::default(),
    })
}

/// Wait-for-all age for shifted exponential `(lambda, shift)` links:
/// `3c/2 + 1/λ + H_n/(2λ) + H2_n/(2λ²c + 2λH_n)`.
pub fn age_wait_for_all(lambda: f64, shift: f64, n: usize) -> Result<AgeResult> {
    check_rate("lambda", lambda)?;
    check_shift(shift)?;
    check_nodes(n)?;
    let h = harmonic(n as u64);
    let h2 = harmonic2(n as u64);
    let components = vec![
        comp(("shift", "3c/2"), 1.5 * shift),
        comp(("rate", "1/λ"), 1.0 / lambda),
        comp(("harmonic", "H_n/(2λ)"), h / (2.0 * lambda)),
        comp(
            VARIANCE_RATIO,
            h2 / (2.0 * lambda * lambda * shift + 2.0 * lambda * h),
        ),
    ];
    Ok(AgeResult {
        total: components.iter().map(|c| c.value).sum(),
        components,
        kind: Kind::Exact,
        scheme: Scheme::WaitForAll,
        params: AgeParams::shifted(lambda, shift, n, n),
    })
}

/// Large-n wait-for-all age with `H_n ≈ ln n + γ` and the variance-ratio
/// term dropped.
pub fn age_wait_for_all_approx(lambda: f64, shift: f64, n: usize) -> Result<AgeResult> {
    check_rate("lambda", lambda)?;
    check_shift(shift)?;
    check_nodes(n)?;
    let log_h = (n as f64).ln() + EULER_GAMMA;
    let components = vec![
        comp(("shift", "3c/2"), 1.5 * shift),
        comp(("rate", "1/λ"), 1.0 / lambda),
        comp(("harmonic", "(ln n + γ)/(2λ)"), log_h / (2.0 * lambda)),
    ];
    Ok(AgeResult {
        total: components.iter().map(|c| c.value).sum(),
        components,
        kind: Kind::Approximate,
        scheme: Scheme::WaitForAll,
        params: AgeParams::shifted(lambda, shift, n, n),
    })
}

/// Earliest-k age:
/// `(1/k) Σ_{i≤k} E[X_{i:n}] + (2n-k)/(2k) E[X_{k:n}] + Var[X_{k:n}] / (2 E[X_{k:n}])`.
pub fn age_earliest_k(lambda: f64, shift: f64, n: usize, k: usize) -> Result<AgeResult> {
    check_rate("lambda", lambda)?;
    check_shift(shift)?;
    check_threshold(k, n)?;
    let (k_f, n_f) = (k as f64, n as f64);
    let kth = order_stat_moments(lambda, shift, k, n)?;
    let delta1 = partial_order_mean_sum(lambda, shift, k, n)? / k_f;
    let interval = (2.0 * n_f - k_f) / (2.0 * k_f) * kth.mean;
    let ratio = kth.variance / (2.0 * kth.mean);
    Ok(AgeResult {
        total: delta1 + interval + ratio,
        components: vec![
            comp(DELTA1, delta1),
            comp(INTERVAL, interval),
            comp(VARIANCE_RATIO, ratio),
        ],
        kind: Kind::Exact,
        scheme: Scheme::EarliestK,
        params: AgeParams::shifted(lambda, shift, n, k),
    })
}

/// Large-n earliest-k age at ratio `alpha = k/n`:
/// `1/λ - ln(1-α)/(2λ) + c/α + c/2`.
///
/// Breakdown: δ₁ ≈ `c + 1/λ + (1-α)/(λα) ln(1-α)` and the remaining
/// terms δ₂ ≈ `(2-α)c/(2α) + (α-2)/(2αλ) ln(1-α)`.
pub fn age_earliest_k_approx(lambda: f64, shift: f64, alpha: f64) -> Result<AgeResult> {
    check_rate("lambda", lambda)?;
    check_shift(shift)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfDomain(alpha));
    }
    let log_miss = (-alpha).ln_1p();
    let delta1 = shift + 1.0 / lambda + (1.0 - alpha) / (lambda * alpha) * log_miss;
    let delta2 =
        (2.0 - alpha) * shift / (2.0 * alpha) + (alpha - 2.0) / (2.0 * alpha * lambda) * log_miss;
    Ok(AgeResult {
        total: 1.0 / lambda - log_miss / (2.0 * lambda) + shift / alpha + shift / 2.0,
        components: vec![
            comp(DELTA1, delta1),
            comp(("delta2", "δ₂ interval and variance-ratio terms"), delta2),
        ],
        kind: Kind::Approximate,
        scheme: Scheme::EarliestK,
        params: AgeParams {
            lambda: Some(lambda),
            shift: Some(shift),
            alpha: Some(alpha),
            ..AgeParams::default()
        },
    })
}

/// Pre-selected-k age in its published closed form:
/// `(k/n) E[X] + (n-k)/(kn) Σ_{i≤k} E[X_{i:k+1}]
///  + (2n-k+nk)/(2(k+nk)) E[X_{k:k}] + Var[X_{k:k}] / (2 E[X_{k:k}])`.
///
/// The derivation treats a non-group node's delivery as independent of
/// the round length. It is exact at `k = n` and overestimates the
/// simulated age for `k < n`; see [`age_preselected_k_renewal`].
pub fn age_preselected_k(lambda: f64, shift: f64, n: usize, k: usize) -> Result<AgeResult> {
    check_rate("lambda", lambda)?;
    check_shift(shift)?;
    check_threshold(k, n)?;
    let (k_f, n_f) = (k as f64, n as f64);
    let mean_x = shift + 1.0 / lambda;
    let group_max = order_stat_moments(lambda, shift, k, k)?;
    let outside = partial_order_mean_sum(lambda, shift, k, k + 1)?;
    let delta1 = k_f / n_f * mean_x + (n_f - k_f) / (k_f * n_f) * outside;
    let interval = (2.0 * n_f - k_f + n_f * k_f) / (2.0 * (k_f + n_f * k_f)) * group_max.mean;
    let ratio = group_max.variance / (2.0 * group_max.mean);
    Ok(AgeResult {
        total: delta1 + interval + ratio,
        components: vec![
            comp(DELTA1, delta1),
            comp(INTERVAL, interval),
            comp(VARIANCE_RATIO, ratio),
        ],
        kind: Kind::Exact,
        scheme: Scheme::PreselectedK,
        params: AgeParams::shifted(lambda, shift, n, k),
    })
}

/// Pre-selected-k age from the renewal-reward argument without assuming
/// that a node's delivery is independent of the round length.
///
/// With `q = k/n`, `D` the event that the node gets the update and `Y`
/// the round length (`X_{k:k}` of the group):
/// `age = E[X; D] / P(D) + E[Y; not D] / P(D) + E[Y^2] / (2 E[Y])`, where
/// a non-group node is delivered iff it is not the slowest of the `k + 1`
/// delays formed with the group, so
/// `E[X; D] = q E[X] + (1-q)/(k+1) Σ_{r≤k} E[X_{r:k+1}]` and
/// `E[Y; not D] = (1-q)/(k+1) E[X_{k:k+1}]`.
pub fn age_preselected_k_renewal(lambda: f64, shift: f64, n: usize, k: usize) -> Result<AgeResult> {
    check_rate("lambda", lambda)?;
    check_shift(shift)?;
    check_threshold(k, n)?;
    let (k_f, n_f) = (k as f64, n as f64);
    let q = k_f / n_f;
    let p_deliver = delivery_probability_preselected(n, k)?;
    let mean_x = shift + 1.0 / lambda;
    let group_max = order_stat_moments(lambda, shift, k, k)?;
    let outside = partial_order_mean_sum(lambda, shift, k, k + 1)?;
    let runner_up = order_stat_moments(lambda, shift, k, k + 1)?;
    let delivered_service = q * mean_x + (1.0 - q) / (k_f + 1.0) * outside;
    let missed_interval = (1.0 - q) / (k_f + 1.0) * runner_up.mean;
    let delta1 = delivered_service / p_deliver;
    let missed = missed_interval / p_deliver;
    let interval = group_max.mean / 2.0;
    let ratio = group_max.variance / (2.0 * group_max.mean);
    Ok(AgeResult {
        total: delta1 + missed + interval + ratio,
        components: vec![
            comp(DELTA1, delta1),
            comp(("missed", "missed-round term"), missed),
            comp(INTERVAL, interval),
            comp(VARIANCE_RATIO, ratio),
        ],
        kind: Kind::Exact,
        scheme: Scheme::PreselectedK,
        params: AgeParams::shifted(lambda, shift, n, k),
    })
}

/// Large-n pre-selected-k age:
/// `c + 1/λ + (n-k)/(λkn)(H_{k+1} - 1) + (2n-k+nk)/(2(k+nk)) (c + H_k/λ)`.
pub fn age_preselected_k_approx(lambda: f64, shift: f64, n: usize, k: usize) -> Result<AgeResult> {
    check_rate("lambda", lambda)?;
    check_shift(shift)?;
    check_threshold(k, n)?;
    let (k_f, n_f) = (k as f64, n as f64);
    let delta1 =
        shift + 1.0 / lambda + (n_f - k_f) / (lambda * k_f * n_f) * (harmonic(k as u64 + 1) - 1.0);
    let interval = (2.0 * n_f - k_f + n_f * k_f) / (2.0 * (k_f + n_f * k_f))
        * (shift + harmonic(k as u64) / lambda);
    Ok(AgeResult {
        total: delta1 + interval,
        components: vec![comp(DELTA1, delta1), comp(INTERVAL, interval)],
        kind: Kind::Approximate,
        scheme: Scheme::PreselectedK,
        params: AgeParams::shifted(lambda, shift, n, k),
    })
}

/// Probability that a fixed node is delivered in a pre-selected-k round:
/// `k/n + (n-k)/n * k/(k+1)`.
pub fn delivery_probability_preselected(n: usize, k: usize) -> Result<f64> {
    check_threshold(k, n)?;
    let (k_f, n_f) = (k as f64, n as f64);
    Ok(k_f / n_f + (n_f - k_f) / n_f * k_f / (k_f + 1.0))
}

/// Probability that a fixed node is among the earliest k of n.
pub fn delivery_probability_earliest(n: usize, k: usize) -> Result<f64> {
    check_threshold(k, n)?;
    Ok(k as f64 / n as f64)
}

/// Minimizer of [`age_earliest_k_approx`] over alpha:
/// `sqrt(λ²c² + 2λc) - λc`. Depends on λ and c only through their product.
pub fn optimal_alpha(lambda: f64, shift: f64) -> Result<f64> {
    check_rate("lambda", lambda)?;
    check_shift(shift)?;
    let x = lambda * shift;
    // Rationalized form of sqrt(x^2 + 2x) - x; avoids cancellation for large x.
    Ok(if x == 0.0 {
        0.0
    } else {
        2.0 * x / ((x * x + 2.0 * x).sqrt() + x)
    })
}

/// `round(alpha* n)` clamped to `[1, n]`.
pub fn optimal_k_closed_form(lambda: f64, shift: f64, n: usize) -> Result<usize> {
    check_nodes(n)?;
    let alpha = optimal_alpha(lambda, shift)?;
    Ok(((alpha * n as f64).round() as usize).clamp(1, n))
}

/// Exhaustive minimization of [`age_earliest_k`] over `k = 1..=n`.
/// Ties go to the smallest k.
pub fn optimal_k_exact(lambda: f64, shift: f64, n: usize) -> Result<(usize, AgeResult)> {
    check_nodes(n)?;
    let mut best = (1, age_earliest_k(lambda, shift, n, 1)?);
    for k in 2..=n {
        let age = age_earliest_k(lambda, shift, n, k)?;
        if age.total < best.1.total {
            best = (k, age);
        }
    }
    Ok(best)
}

/// Exact closed-form age of `scheme` at threshold `k` (ignored for wait-for-all).
pub fn age_exact(scheme: Scheme, lambda: f64, shift: f64, n: usize, k: usize) -> Result<AgeResult> {
    match scheme {
        Scheme::WaitForAll => age_wait_for_all(lambda, shift, n),
        Scheme::EarliestK => age_earliest_k(lambda, shift, n, k),
        Scheme::PreselectedK => age_preselected_k(lambda, shift, n, k),
    }
}
