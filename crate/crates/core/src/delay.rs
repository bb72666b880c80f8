//! Link delay laws, seeded random streams, harmonic numbers and the
//! moments of order statistics of shifted exponentials.
//!
//! Exact formulas here always sum harmonic numbers term by term. The
//! logarithmic substitute `ln n + γ` is used only by the explicitly
//! approximate operations in [`crate::analytics`].

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_rate, check_shift, check_threshold, Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Tolerance on the sum of hyper-exponential mixing weights.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Above this many terms harmonic sums switch to compensated accumulation.
const COMPENSATE_ABOVE: u64 = 10_000;

/// Per-link i.i.d. service-time distribution.
///
/// Validity is checked by the constructors, so every value of this type is
/// a well-formed law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DelayModelRepr", into = "DelayModelRepr")]
pub struct DelayModel {
    law: Law,
}

#[derive(Debug, Clone, PartialEq)]
enum Law {
    ShiftedExponential {
        rate: f64,
        shift: f64,
    },
    HyperExponential {
        rates: Vec<f64>,
        weights: Vec<f64>,
        cumulative: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DelayModelRepr {
    ShiftedExponential { rate: f64, shift: f64 },
    HyperExponential { rates: Vec<f64>, weights: Vec<f64> },
}

impl TryFrom<DelayModelRepr> for DelayModel {
    type Error = Error;

    fn try_from(repr: DelayModelRepr) -> Result<Self> {
        match repr {
            DelayModelRepr::ShiftedExponential { rate, shift } => {
                DelayModel::shifted_exponential(rate, shift)
            }
            DelayModelRepr::HyperExponential { rates, weights } => {
                DelayModel::hyper_exponential(rates, weights)
            }
        }
    }
}

impl From<DelayModel> for DelayModelRepr {
    fn from(model: DelayModel) -> Self {
        match model.law {
            Law::ShiftedExponential { rate, shift } => {
                DelayModelRepr::ShiftedExponential { rate, shift }
            }
            Law::HyperExponential { rates, weights, .. } => {
                DelayModelRepr::HyperExponential { rates, weights }
            }
        }
    }
}

impl DelayModel {
    /// Shifted exponential with CDF `1 - exp(-rate (x - shift))` for `x >= shift`.
    pub fn shifted_exponential(rate: f64, shift: f64) -> Result<Self> {
        check_rate("rate", rate)?;
        check_shift(shift)?;
        Ok(Self {
            law: Law::ShiftedExponential { rate, shift },
        })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::shifted_exponential(rate, 0.0)
    }

    /// Mixture of exponentials: component `i` has rate `rates[i]` and is
    /// chosen with probability `weights[i]`.
    pub fn hyper_exponential(rates: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if rates.is_empty() || rates.len() != weights.len() {
            return Err(Error::InvalidParameter {
                name: "weights",
                value: weights.len() as f64,
                reason: "rates and weights must be non-empty lists of equal length",
            });
        }
        for &rate in &rates {
            check_rate("rates", rate)?;
        }
        for &w in &weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "weights",
                    value: w,
                    reason: "weights must be probabilities",
                });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter {
                name: "weights",
                value: total,
                reason: "weights must sum to 1",
            });
        }
        let mut cumulative: Vec<f64> = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        // Guard against the last cumulative weight landing just below 1.
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Ok(Self {
            law: Law::HyperExponential {
                rates,
                weights,
                cumulative,
            },
        })
    }

    /// `(rate, shift)` when the model is a (shifted) exponential.
    pub fn as_shifted_exponential(&self) -> Option<(f64, f64)> {
        match self.law {
            Law::ShiftedExponential { rate, shift } => Some((rate, shift)),
            Law::HyperExponential { .. } => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.law {
            Law::ShiftedExponential { rate, shift } => shift + 1.0 / rate,
            Law::HyperExponential { rates, weights, .. } => {
                rates.iter().zip(weights).map(|(r, w)| w / r).sum()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match &self.law {
            Law::ShiftedExponential { rate, .. } => 1.0 / (rate * rate),
            Law::HyperExponential { rates, weights, .. } => {
                let second: f64 = rates
                    .iter()
                    .zip(weights)
                    .map(|(r, w)| 2.0 * w / (r * r))
                    .sum();
                let mean = self.mean();
                second - mean * mean
            }
        }
    }

    /// Smallest value in the support.
    pub fn lower_bound(&self) -> f64 {
        match self.law {
            Law::ShiftedExponential { shift, .. } => shift,
            Law::HyperExponential { .. } => 0.0,
        }
    }

    /// One draw by inversion, using a uniform on (0, 1].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.law {
            Law::ShiftedExponential { rate, shift } => shift - unit_open_below(rng).ln() / rate,
            Law::HyperExponential {
                rates, cumulative, ..
            } => {
                let pick: f64 = rng.random();
                let component = cumulative.partition_point(|&c| c <= pick);
                -unit_open_below(rng).ln() / rates[component]
            }
        }
    }
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.law {
            Law::ShiftedExponential { rate, shift } if *shift == 0.0 => {
                write!(f, "exp(rate={rate})")
            }
            Law::ShiftedExponential { rate, shift } => {
                write!(f, "shifted-exp(rate={rate};shift={shift})")
            }
            Law::HyperExponential { rates, weights, .. } => {
                let join = |v: &[f64]| {
                    v.iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join("/")
                };
                write!(
                    f,
                    "hyperexp(rates={};weights={})",
                    join(rates),
                    join(weights)
                )
            }
        }
    }
}

/// Uniform on (0, 1]; zero is excluded so `ln` stays finite.
fn unit_open_below<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Deterministic random source identified by `(seed, stream index)`.
///
/// Streams with the same seed but different indices are independent
/// ChaCha8 streams; the same pair always replays the same sequence.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    index: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { seed, index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn sample_delay(model: &DelayModel, stream: &mut RandomStream) -> f64 {
    model.sample(stream)
}

/// `H_n = 1 + 1/2 + ... + 1/n`, with `H_0 = 0`.
pub fn harmonic(n: u64) -> f64 {
    harmonic_diff(n, 0)
}

/// Second-order harmonic number `1 + 1/4 + ... + 1/n^2`, with value 0 at n = 0.
pub fn harmonic2(n: u64) -> f64 {
    harmonic2_diff(n, 0)
}

/// `H_n - H_m` for `m <= n`, summed over the tail directly.
pub fn harmonic_diff(n: u64, m: u64) -> f64 {
    tail_sum(n, m, |j| 1.0 / j)
}

/// `H^(2)_n - H^(2)_m` for `m <= n`.
pub fn harmonic2_diff(n: u64, m: u64) -> f64 {
    tail_sum(n, m, |j| 1.0 / (j * j))
}

fn tail_sum(n: u64, m: u64, term: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(m <= n);
    // Smallest terms first.
    let terms = (m + 1..=n).rev().map(|j| term(j as f64));
    if n - m > COMPENSATE_ABOVE {
        neumaier_sum(terms)
    } else {
        terms.sum()
    }
}

fn neumaier_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Moments of the k-th smallest of n i.i.d. draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderStatMoments {
    pub mean: f64,
    pub variance: f64,
    pub second_moment: f64,
    pub k: usize,
    pub n: usize,
}

/// Closed-form moments of `X_{k:n}` for shifted exponential `(rate, shift)` links.
pub fn order_stat_moments(rate: f64, shift: f64, k: usize, n: usize) -> Result<OrderStatMoments> {
    check_rate("rate", rate)?;
    check_shift(shift)?;
    check_threshold(k, n)?;
    let h = harmonic_diff(n as u64, (n - k) as u64);
    let h2 = harmonic2_diff(n as u64, (n - k) as u64);
    let mean = shift + h / rate;
    let variance = h2 / (rate * rate);
    let second_moment = shift * shift + 2.0 * shift * h / rate + (h * h + h2) / (rate * rate);
    Ok(OrderStatMoments {
        mean,
        variance,
        second_moment,
        k,
        n,
    })
}

/// `E[X_{1:n}] + ... + E[X_{k:n}]` in closed form.
///
/// Uses `H_1 + ... + H_m = (m + 1)(H_{m+1} - 1)` to collapse the double sum.
pub fn partial_order_mean_sum(rate: f64, shift: f64, k: usize, n: usize) -> Result<f64> {
    check_rate("rate", rate)?;
    check_shift(shift)?;
    check_threshold(k, n)?;
    let k_f = k as f64;
    let rest = (n - k) as f64;
    Ok(k_f * (shift + 1.0 / rate) - rest / rate * harmonic_diff(n as u64, (n - k) as u64))
}

/// Empirical moments of `X_{k:n}` from brute-force sorting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub mean: f64,
    pub variance: f64,
    /// Standard error of `mean`.
    pub mean_stderr: f64,
    /// Delta-method standard error of `variance`.
    pub variance_stderr: f64,
    pub samples: usize,
}

pub const MIN_ORACLE_SAMPLES: usize = 1_000;

/// Draws `samples` batches of `n` delays, and reports the empirical moments
/// of the k-th smallest value in each batch. Works for any [`DelayModel`].
pub fn order_stat_mc_oracle(
    model: &DelayModel,
    k: usize,
    n: usize,
    samples: usize,
    stream: &mut RandomStream,
) -> Result<OracleEstimate> {
    check_threshold(k, n)?;
    if samples < MIN_ORACLE_SAMPLES {
        return Err(Error::InvalidParameter {
            name: "samples",
            value: samples as f64,
            reason: "at least 1000 samples are required",
        });
    }
    let mut batch = vec![0.0; n];
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            for x in batch.iter_mut() {
                *x = model.sample(stream);
            }
            let (_, kth, _) = batch.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect();

    let count = samples as f64;
    let mean = values.iter().sum::<f64>() / count;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(m2, m4), &x| {
        let d = x - mean;
        let d2 = d * d;
        (m2 + d2, m4 + d2 * d2)
    });
    let m2 = m2 / count;
    let m4 = m4 / count;
    let variance = m2 * count / (count - 1.0);
    Ok(OracleEstimate {
        mean,
        variance,
        mean_stderr: (variance / count).sqrt(),
        variance_stderr: ((m4 - m2 * m2).max(0.0) / count).sqrt(),
        samples,
    })
}
