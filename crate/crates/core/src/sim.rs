//! Round-based Monte Carlo simulation of the per-node age sawtooth.
//!
//! Under zero-wait updating with instantaneous feedback each update round
//! ends at exactly one completion instant, so the engine steps round by
//! round instead of keeping a general event queue.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::Scheme;
use crate::delay::{DelayModel, RandomStream};
use crate::error::{check_nodes, check_threshold, Error, Result};

/// Default number of discarded rounds before measurement starts.
pub const DEFAULT_WARMUP: u64 = 1_000;

/// Fewer measured rounds than this and no standard error is reported.
pub const MIN_ROUNDS_FOR_STATS: u64 = 100;

const BATCHES: usize = 32;

/// How the pre-selected group evolves across updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regroup {
    /// A fresh uniformly random group for every update.
    PerUpdate,
    /// One group drawn before the first update and kept.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum StoppingPolicy {
    WaitForAll,
    EarliestK { k: usize },
    PreSelectedK { k: usize, regroup: Regroup },
}

impl StoppingPolicy {
    pub fn from_scheme(scheme: Scheme, k: usize, regroup: Regroup) -> Self {
        match scheme {
            Scheme::WaitForAll => StoppingPolicy::WaitForAll,
            Scheme::EarliestK => StoppingPolicy::EarliestK { k },
            Scheme::PreselectedK => StoppingPolicy::PreSelectedK { k, regroup },
        }
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            StoppingPolicy::WaitForAll => Scheme::WaitForAll,
            StoppingPolicy::EarliestK { .. } => Scheme::EarliestK,
            StoppingPolicy::PreSelectedK { .. } => Scheme::PreselectedK,
        }
    }

    /// Number of acknowledgements awaited in a system of `n` nodes.
    pub fn threshold(&self, n: usize) -> usize {
        match *self {
            StoppingPolicy::WaitForAll => n,
            StoppingPolicy::EarliestK { k } | StoppingPolicy::PreSelectedK { k, .. } => k,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_nodes(n)?;
        check_threshold(self.threshold(n), n)
    }
}

/// Outcome of one update round.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    /// Round length `Y`: time from the start of the update to its completion.
    pub service_time: f64,
    /// Nodes that received the update, in increasing index order.
    pub delivered: Vec<usize>,
}

/// Applies a stopping policy to per-round delay vectors, reusing scratch
/// buffers across rounds.
#[derive(Debug, Clone)]
pub struct RoundEngine {
    policy: StoppingPolicy,
    n: usize,
    order: Vec<usize>,
    group: Vec<usize>,
    group_ready: bool,
}

impl RoundEngine {
    pub fn new(policy: StoppingPolicy, n: usize) -> Result<Self> {
        policy.validate(n)?;
        Ok(Self {
            policy,
            n,
            order: Vec::with_capacity(n),
            group: Vec::new(),
            group_ready: false,
        })
    }

    /// Engine for a pre-selected policy whose group is pinned to `group`.
    /// A per-update policy still redraws the group from the next round on.
    pub fn with_group(policy: StoppingPolicy, n: usize, mut group: Vec<usize>) -> Result<Self> {
        let mut engine = Self::new(policy, n)?;
        group.sort_unstable();
        group.dedup();
        if group.len() != policy.threshold(n) || group.iter().any(|&i| i >= n) {
            return Err(Error::InvalidParameter {
                name: "group",
                value: group.len() as f64,
                reason: "group must hold k distinct node indices below n",
            });
        }
        engine.group = group;
        engine.group_ready = true;
        Ok(engine)
    }

    pub fn policy(&self) -> StoppingPolicy {
        self.policy
    }

    /// Current pre-selected group (empty for other policies).
    pub fn group(&self) -> &[usize] {
        &self.group
    }

    /// Runs one round. Marks delivered nodes in `delivered` and returns
    /// the round length.
    pub fn run<R: Rng + ?Sized>(
        &mut self,
        delays: &[f64],
        group_rng: &mut R,
        delivered: &mut [bool],
    ) -> f64 {
        debug_assert_eq!(delays.len(), self.n);
        debug_assert_eq!(delivered.len(), self.n);
        match self.policy {
            StoppingPolicy::WaitForAll => {
                delivered.fill(true);
                delays.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
            StoppingPolicy::EarliestK { k } if k == self.n => {
                delivered.fill(true);
                delays.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
            StoppingPolicy::EarliestK { k } => {
                self.order.clear();
                self.order.extend(0..self.n);
                // Ties go to the lower index.
                self.order.select_nth_unstable_by(k - 1, |&a, &b| {
                    delays[a].total_cmp(&delays[b]).then(a.cmp(&b))
                });
                delivered.fill(false);
                for &i in &self.order[..k] {
                    delivered[i] = true;
                }
                delays[self.order[k - 1]]
            }
            StoppingPolicy::PreSelectedK { k, regroup } => {
                let redraw = match regroup {
                    Regroup::PerUpdate => !std::mem::take(&mut self.group_ready),
                    Regroup::Fixed => !self.group_ready,
                };
                if redraw {
                    self.group = index::sample(group_rng, self.n, k).into_vec();
                    if regroup == Regroup::Fixed {
                        self.group_ready = true;
                    }
                }
                let service = self
                    .group
                    .iter()
                    .map(|&i| delays[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                for (flag, &d) in delivered.iter_mut().zip(delays) {
                    *flag = d <= service;
                }
                for &i in &self.group {
                    delivered[i] = true;
                }
                service
            }
        }
    }
}

/// Stateless single-round helper: applies `policy` to `delays`.
pub fn run_round<R: Rng + ?Sized>(
    policy: StoppingPolicy,
    delays: &[f64],
    group_rng: &mut R,
) -> Result<Round> {
    if let Some(&bad) = delays.iter().find(|d| d.is_nan() || **d < 0.0) {
        return Err(Error::InvalidParameter {
            name: "delays",
            value: bad,
            reason: "delays must be non-negative",
        });
    }
    let mut engine = RoundEngine::new(policy, delays.len())?;
    let mut mask = vec![false; delays.len()];
    let service_time = engine.run(delays, group_rng, &mut mask);
    Ok(Round {
        service_time,
        delivered: mask_to_indices(&mask),
    })
}

fn mask_to_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &d)| d.then_some(i))
        .collect()
}

/// Sawtooth bookkeeping for one receiver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct NodeAgeState {
    pub last_delivery_wall: f64,
    pub last_gen_timestamp: f64,
    /// Integral of the age over `observed_span`.
    pub area: f64,
    pub observed_span: f64,
}

impl NodeAgeState {
    /// A node that has just received an update generated at time 0.
    pub fn fresh() -> Self {
        Self::default()
    }

    pub fn age_at(&self, wall: f64) -> f64 {
        wall - self.last_gen_timestamp
    }

    /// Adds the age area between the previous delivery and a delivery at
    /// `delivery_wall` of an update generated at `gen_timestamp`.
    ///
    /// With gap `g` and age `a0` at the previous delivery the area grows by
    /// the trapezoid `a0 g + g^2/2`.
    pub fn accumulate_delivery(&mut self, delivery_wall: f64, gen_timestamp: f64) -> Result<()> {
        if !(delivery_wall >= self.last_delivery_wall
            && gen_timestamp >= self.last_gen_timestamp
            && delivery_wall >= gen_timestamp)
        {
            return Err(Error::TimeTravel {
                delivery_wall,
                gen_timestamp,
                last_delivery_wall: self.last_delivery_wall,
                last_gen_timestamp: self.last_gen_timestamp,
            });
        }
        let gap = delivery_wall - self.last_delivery_wall;
        let start_age = self.last_delivery_wall - self.last_gen_timestamp;
        self.area += start_age * gap + 0.5 * gap * gap;
        self.observed_span += gap;
        self.last_delivery_wall = delivery_wall;
        self.last_gen_timestamp = gen_timestamp;
        Ok(())
    }

    pub fn reset_measurement(&mut self) {
        self.area = 0.0;
        self.observed_span = 0.0;
    }

    /// Time-average age over the observed span, if any time was observed.
    pub fn average_age(&self) -> Option<f64> {
        (self.observed_span > 0.0).then(|| self.area / self.observed_span)
    }
}

/// Full description of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub policy: StoppingPolicy,
    pub model: DelayModel,
    /// Measured update rounds after warmup.
    pub updates: u64,
    /// Discarded rounds.
    pub warmup: u64,
    pub seed: u64,
    pub replications: usize,
}

impl SimConfig {
    pub fn new(n: usize, policy: StoppingPolicy, model: DelayModel) -> Self {
        Self {
            n,
            policy,
            model,
            updates: 1_000_000,
            warmup: DEFAULT_WARMUP,
            seed: 0,
            replications: 1,
        }
    }

    pub fn with_updates(mut self, updates: u64) -> Self {
        self.updates = updates;
        self
    }

    pub fn with_warmup(mut self, warmup: u64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate(self.n)?;
        if self.updates == 0 {
            return Err(Error::InvalidParameter {
                name: "updates",
                value: 0.0,
                reason: "at least one measured round is required",
            });
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter {
                name: "replications",
                value: 0.0,
                reason: "at least one replication is required",
            });
        }
        Ok(())
    }
}

/// Moments of the number of rounds between consecutive deliveries to a node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GapMoments {
    pub count: u64,
    pub mean: f64,
    pub second_moment: f64,
}

impl GapMoments {
    fn pooled(parts: &[GapMoments]) -> Self {
        let count: u64 = parts.iter().map(|g| g.count).sum();
        if count == 0 {
            return Self::default();
        }
        let weight = |g: &GapMoments| g.count as f64 / count as f64;
        Self {
            count,
            mean: parts.iter().map(|g| weight(g) * g.mean).sum(),
            second_moment: parts.iter().map(|g| weight(g) * g.second_moment).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub per_node_avg_age: Vec<f64>,
    /// Mean of `per_node_avg_age`.
    pub grand_mean: f64,
    /// Batch-means standard error, pooled over replications. Runs shorter
    /// than [`MIN_ROUNDS_FOR_STATS`] rounds fall back to the spread across
    /// replications, or `None` for a single run.
    pub std_error: Option<f64>,
    /// Measured wall-clock span, summed over replications.
    pub virtual_time: f64,
    /// Measured rounds, summed over replications.
    pub rounds: u64,
    pub delivery_fraction: Vec<f64>,
    pub round_gaps: GapMoments,
    pub replications: usize,
}

/// One simulation run on replication index 0.
pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    run_replication(config, 0, None)
}

/// Like [`simulate`], additionally writing one CSV row per round
/// (`round,service_time,delivered,ages`) to `trace`. Lists inside a row
/// are `;`-separated.
pub fn simulate_traced<W: Write>(config: &SimConfig, trace: W) -> Result<SimResult> {
    config.validate()?;
    let mut trace = trace;
    let mut writer = csv::Writer::from_writer(&mut trace as &mut dyn Write);
    writer.write_record(["round", "service_time", "delivered", "ages"])?;
    let result = run_replication(config, 0, Some(&mut writer))?;
    writer.flush()?;
    Ok(result)
}

/// Runs `config.replications` independent runs and aggregates them in
/// replication order.
pub fn replicate(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let runs: Vec<Result<SimResult>> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, r as u64, None))
        .collect();
    let mut results = Vec::with_capacity(runs.len());
    for (index, run) in runs.into_iter().enumerate() {
        match run {
            Ok(result) => results.push(result),
            Err(e) => {
                return Err(Error::Replication {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    if results.len() == 1 {
        return Ok(results.pop().expect("one replication"));
    }
    Ok(aggregate(config.n, &results))
}

fn aggregate(n: usize, results: &[SimResult]) -> SimResult {
    let reps = results.len() as f64;
    let per_node_avg_age: Vec<f64> = (0..n)
        .map(|i| results.iter().map(|r| r.per_node_avg_age[i]).sum::<f64>() / reps)
        .collect();
    let delivery_fraction: Vec<f64> = (0..n)
        .map(|i| results.iter().map(|r| r.delivery_fraction[i]).sum::<f64>() / reps)
        .collect();
    let means: Vec<f64> = results.iter().map(|r| r.grand_mean).collect();
    let gaps: Vec<GapMoments> = results.iter().map(|r| r.round_gaps).collect();
    SimResult {
        grand_mean: per_node_avg_age.iter().sum::<f64>() / n as f64,
        per_node_avg_age,
        std_error: pooled_standard_error(results).or_else(|| standard_error(&means)),
        virtual_time: results.iter().map(|r| r.virtual_time).sum(),
        rounds: results.iter().map(|r| r.rounds).sum(),
        delivery_fraction,
        round_gaps: GapMoments::pooled(&gaps),
        replications: results.len(),
    }
}

/// Standard error of the equally weighted mean of independent runs, from
/// each run's own batch-means error.
fn pooled_standard_error(results: &[SimResult]) -> Option<f64> {
    let sum_sq = results
        .iter()
        .map(|r| r.std_error.map(|s| s * s))
        .sum::<Option<f64>>()?;
    Some(sum_sq.sqrt() / results.len() as f64)
}

/// Standard error of the mean of `values`; `None` for fewer than two.
fn standard_error(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    Some((var / count).sqrt())
}

/// Stream indices used by replication `r`: delays on `2r`, group draws on
/// `2r + 1`. Policies sharing a seed therefore see identical delays.
fn streams(seed: u64, replication: u64) -> (RandomStream, RandomStream) {
    (
        RandomStream::new(seed, 2 * replication),
        RandomStream::new(seed, 2 * replication + 1),
    )
}

fn run_replication(
    config: &SimConfig,
    replication: u64,
    mut trace: Option<&mut csv::Writer<&mut dyn Write>>,
) -> Result<SimResult> {
    let n = config.n;
    let (mut delay_rng, mut group_rng) = streams(config.seed, replication);
    let mut engine = RoundEngine::new(config.policy, n)?;
    let mut delays = vec![0.0; n];
    let mut delivered = vec![false; n];
    let mut nodes = vec![NodeAgeState::fresh(); n];
    let mut deliveries = vec![0u64; n];
    let mut last_round: Vec<Option<u64>> = vec![None; n];
    let (mut gap_count, mut gap_sum, mut gap_sq) = (0u64, 0.0f64, 0.0f64);

    let with_stats = config.updates >= MIN_ROUNDS_FOR_STATS;
    let mut batch_area = [0.0f64; BATCHES];
    let mut batch_span = [0.0f64; BATCHES];

    let total_rounds = config.warmup + config.updates;
    let mut clock = 0.0f64;
    let mut measure_start = 0.0f64;

    for round in 0..total_rounds {
        if round == config.warmup {
            for node in nodes.iter_mut() {
                node.reset_measurement();
            }
            measure_start = clock;
        }
        let measuring = round >= config.warmup;

        for d in delays.iter_mut() {
            *d = config.model.sample(&mut delay_rng);
        }
        let service = engine.run(&delays, &mut group_rng, &mut delivered);
        let generated = clock;
        let batch = if measuring && with_stats {
            ((round - config.warmup) as u128 * BATCHES as u128 / config.updates as u128) as usize
        } else {
            0
        };

        for i in 0..n {
            if !delivered[i] {
                continue;
            }
            let node = &mut nodes[i];
            let (area_before, span_before) = (node.area, node.observed_span);
            node.accumulate_delivery(generated + delays[i], generated)?;
            if measuring {
                deliveries[i] += 1;
                if with_stats {
                    batch_area[batch] += node.area - area_before;
                    batch_span[batch] += node.observed_span - span_before;
                }
                if let Some(prev) = last_round[i] {
                    let gap = (round - prev) as f64;
                    gap_count += 1;
                    gap_sum += gap;
                    gap_sq += gap * gap;
                }
            }
            last_round[i] = Some(round);
        }
        clock += service;

        if let Some(writer) = trace.as_deref_mut() {
            let delivered_list = join(mask_to_indices(&delivered).iter());
            let ages = join(nodes.iter().map(|s| s.age_at(clock)));
            writer.write_record([round.to_string(), service.to_string(), delivered_list, ages])?;
        }
    }

    let mut per_node_avg_age = Vec::with_capacity(n);
    for (i, node) in nodes.iter().enumerate() {
        match node.average_age() {
            Some(avg) if deliveries[i] > 0 => per_node_avg_age.push(avg),
            _ => return Err(Error::NoDeliveries { node: i }),
        }
    }
    let batch_means: Vec<f64> = batch_area
        .iter()
        .zip(&batch_span)
        .filter(|(_, &s)| s > 0.0)
        .map(|(a, s)| a / s)
        .collect();
    let std_error = if with_stats {
        standard_error(&batch_means)
    } else {
        None
    };
    let updates = config.updates as f64;
    Ok(SimResult {
        grand_mean: per_node_avg_age.iter().sum::<f64>() / n as f64,
        per_node_avg_age,
        std_error,
        virtual_time: clock - measure_start,
        rounds: config.updates,
        delivery_fraction: deliveries.iter().map(|&d| d as f64 / updates).collect(),
        round_gaps: if gap_count > 0 {
            GapMoments {
                count: gap_count,
                mean: gap_sum / gap_count as f64,
                second_moment: gap_sq / gap_count as f64,
            }
        } else {
            GapMoments::default()
        },
        replications: 1,
    })
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{
        age_earliest_k, age_preselected_k, age_preselected_k_renewal, age_wait_for_all,
        delivery_probability_preselected,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const DELAYS: [f64; 3] = [0.7, 0.3, 0.9];

    fn exp(rate: f64) -> DelayModel {
        DelayModel::exponential(rate).unwrap()
    }

    #[test]
    fn earliest_one_picks_fastest() {
        let mut rng = RandomStream::new(0, 1);
        let r = run_round(StoppingPolicy::EarliestK { k: 1 }, &DELAYS, &mut rng).unwrap();
        assert_eq!(r.service_time, 0.3);
        assert_eq!(r.delivered, vec![1]);
    }

    #[test]
    fn wait_for_all_delivers_everyone() {
        let mut rng = RandomStream::new(0, 1);
        let r = run_round(StoppingPolicy::WaitForAll, &DELAYS, &mut rng).unwrap();
        assert_eq!(r.service_time, 0.9);
        assert_eq!(r.delivered, vec![0, 1, 2]);
    }

    #[test]
    fn preselected_delivers_nodes_faster_than_group() {
        let policy = StoppingPolicy::PreSelectedK {
            k: 1,
            regroup: Regroup::Fixed,
        };
        let mut engine = RoundEngine::with_group(policy, 3, vec![0]).unwrap();
        let mut rng = RandomStream::new(0, 1);
        let mut mask = [false; 3];
        let y = engine.run(&DELAYS, &mut rng, &mut mask);
        assert_eq!(y, 0.7);
        assert_eq!(mask, [true, true, false]);
    }

    #[test]
    fn earliest_ties_go_to_lowest_index() {
        let mut rng = RandomStream::new(0, 1);
        let r = run_round(
            StoppingPolicy::EarliestK { k: 2 },
            &[1.0, 0.5, 1.0, 1.0],
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.service_time, 1.0);
        assert_eq!(r.delivered, vec![0, 1]);
    }

    #[test]
    fn run_round_rejects_bad_input() {
        let mut rng = RandomStream::new(0, 1);
        assert!(matches!(
            run_round(StoppingPolicy::EarliestK { k: 4 }, &DELAYS, &mut rng),
            Err(Error::ThresholdOutOfRange { k: 4, n: 3 })
        ));
        assert!(run_round(StoppingPolicy::EarliestK { k: 1 }, &[0.1, -1.0], &mut rng).is_err());
        assert!(RoundEngine::with_group(
            StoppingPolicy::PreSelectedK {
                k: 2,
                regroup: Regroup::Fixed
            },
            3,
            vec![0, 0]
        )
        .is_err());
    }

    #[test]
    fn fixed_group_is_kept_and_per_update_group_moves() {
        let mut rng = RandomStream::new(9, 1);
        let delays = vec![1.0; 20];
        let mut mask = vec![false; 20];
        let mut fixed = RoundEngine::new(
            StoppingPolicy::PreSelectedK {
                k: 3,
                regroup: Regroup::Fixed,
            },
            20,
        )
        .unwrap();
        fixed.run(&delays, &mut rng, &mut mask);
        let first = fixed.group().to_vec();
        for _ in 0..10 {
            fixed.run(&delays, &mut rng, &mut mask);
            assert_eq!(fixed.group(), first.as_slice());
        }
        let mut moving = RoundEngine::new(
            StoppingPolicy::PreSelectedK {
                k: 3,
                regroup: Regroup::PerUpdate,
            },
            20,
        )
        .unwrap();
        let groups: Vec<Vec<usize>> = (0..10)
            .map(|_| {
                moving.run(&delays, &mut rng, &mut mask);
                moving.group().to_vec()
            })
            .collect();
        assert!(groups.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn accumulate_examples() {
        let mut s = NodeAgeState::fresh();
        s.accumulate_delivery(2.0, 0.0).unwrap();
        assert_eq!(s.area, 2.0);

        let mut s = NodeAgeState {
            last_delivery_wall: 1.0,
            last_gen_timestamp: 0.0,
            ..NodeAgeState::default()
        };
        s.accumulate_delivery(3.0, 2.5).unwrap();
        assert_eq!(s.area, 4.0);
        assert_eq!(s.observed_span, 2.0);
    }

    #[test]
    fn accumulate_rejects_time_travel() {
        let mut s = NodeAgeState {
            last_delivery_wall: 5.0,
            last_gen_timestamp: 4.0,
            ..NodeAgeState::default()
        };
        assert!(s.accumulate_delivery(4.0, 4.5).is_err());
        assert!(s.accumulate_delivery(6.0, 3.0).is_err());
        assert!(s.accumulate_delivery(6.0, 6.5).is_err());
        assert_eq!(s.area, 0.0);
    }

    #[test]
    fn accumulate_reproduces_trapezoid_areas() {
        // Three wait-for-all rounds with Y = (2, 1, 3) and this node's
        // delays (0.5, 0.25, 1.0). Each round adds Y_prev X + Y^2 / 2.
        let ys = [2.0, 1.0, 3.0];
        let xs = [0.5, 0.25, 1.0];
        let mut s = NodeAgeState::fresh();
        let mut t = 0.0;
        for (y, x) in ys.iter().zip(&xs) {
            s.accumulate_delivery(t + x, t).unwrap();
            t += y;
        }
        // Close the trace at the next delivery instant so the last polygon
        // is complete: deliver a fourth update generated at t with delay 0.
        s.accumulate_delivery(t, t).unwrap();
        // Round areas by the trapezoid identity, starting from age 0 at t = 0.
        let expected = 0.0 * 0.5
            + 2.0f64.powi(2) / 2.0
            + 2.0 * 0.25
            + 1.0f64.powi(2) / 2.0
            + 1.0 * 1.0
            + 3.0f64.powi(2) / 2.0
            + 3.0 * 0.0;
        assert!(
            (s.area - expected).abs() < 1e-12,
            "{} vs {expected}",
            s.area
        );
        assert_eq!(s.observed_span, 6.0);
    }

    fn mean_within(result: &SimResult, expected: f64, rel: f64) {
        let err = (result.grand_mean - expected).abs() / expected;
        assert!(
            err <= rel,
            "simulated {} vs {expected} (rel {err:.4}, se {:?})",
            result.grand_mean,
            result.std_error
        );
    }

    #[test]
    fn single_node_matches_closed_form() {
        let model = DelayModel::shifted_exponential(1.0, 1.0).unwrap();
        let cfg = SimConfig::new(1, StoppingPolicy::EarliestK { k: 1 }, model).with_seed(1);
        mean_within(&simulate(&cfg).unwrap(), 3.25, 0.01);
    }

    #[test]
    fn earliest_one_of_two_matches_closed_form() {
        let cfg = SimConfig::new(2, StoppingPolicy::EarliestK { k: 1 }, exp(1.0)).with_seed(2);
        let r = simulate(&cfg).unwrap();
        mean_within(&r, age_earliest_k(1.0, 0.0, 2, 1).unwrap().total, 0.01);
    }

    #[test]
    fn preselected_one_of_two_matches_renewal_not_closed_form() {
        let policy = StoppingPolicy::PreSelectedK {
            k: 1,
            regroup: Regroup::PerUpdate,
        };
        let cfg = SimConfig::new(2, policy, exp(1.0)).with_seed(3);
        let r = simulate(&cfg).unwrap();
        let renewal = age_preselected_k_renewal(1.0, 0.0, 2, 1).unwrap().total;
        mean_within(&r, renewal, 0.01);
        let se = r.std_error.unwrap();
        let closed = age_preselected_k(1.0, 0.0, 2, 1).unwrap().total;
        assert!(closed - r.grand_mean > 10.0 * se);
    }

    #[test]
    fn hyper_exponential_runs() {
        let model = DelayModel::hyper_exponential(vec![1.0, 6.0], vec![0.4, 0.6]).unwrap();
        let cfg = SimConfig::new(10, StoppingPolicy::EarliestK { k: 5 }, model)
            .with_updates(20_000)
            .with_seed(4);
        let r = simulate(&cfg).unwrap();
        assert!(r.grand_mean.is_finite() && r.grand_mean > 0.0);
    }

    #[test]
    fn invariants_of_a_result() {
        let model = DelayModel::shifted_exponential(2.0, 1.0).unwrap();
        let cfg = SimConfig::new(5, StoppingPolicy::EarliestK { k: 2 }, model)
            .with_updates(20_000)
            .with_seed(5);
        let r = simulate(&cfg).unwrap();
        assert_eq!(r.per_node_avg_age.len(), 5);
        assert_relative_eq!(
            r.grand_mean,
            r.per_node_avg_age.iter().sum::<f64>() / 5.0,
            max_relative = 1e-15
        );
        assert!(r.per_node_avg_age.iter().all(|&a| a >= 1.0));
        assert!(r
            .delivery_fraction
            .iter()
            .all(|&f| (0.0..=1.0).contains(&f)));
        assert_eq!(r.rounds, 20_000);
        assert!(r.virtual_time > 20_000.0);
    }

    #[test]
    fn delivery_fractions_match_probabilities() {
        let updates = 200_000u64;
        let check = |policy, p: f64| {
            let cfg = SimConfig::new(10, policy, exp(1.0))
                .with_updates(updates)
                .with_seed(6);
            let r = simulate(&cfg).unwrap();
            let sigma = (p * (1.0 - p) / updates as f64).sqrt();
            for f in &r.delivery_fraction {
                assert!((f - p).abs() <= 4.0 * sigma, "{f} vs {p}");
            }
            r
        };
        let r = check(StoppingPolicy::EarliestK { k: 3 }, 0.3);
        // Geometric gaps between deliveries: E[M] = n/k, E[M^2] = 2n^2/k^2 - n/k.
        let (em, em2) = (10.0 / 3.0, 2.0 * 100.0 / 9.0 - 10.0 / 3.0);
        assert!((r.round_gaps.mean - em).abs() / em < 0.01);
        assert!((r.round_gaps.second_moment - em2).abs() / em2 < 0.02);
        check(
            StoppingPolicy::PreSelectedK {
                k: 3,
                regroup: Regroup::PerUpdate,
            },
            delivery_probability_preselected(10, 3).unwrap(),
        );
    }

    #[test]
    fn full_threshold_policies_coincide() {
        let model = DelayModel::shifted_exponential(1.0, 0.5).unwrap();
        let run = |policy| {
            simulate(
                &SimConfig::new(4, policy, model.clone())
                    .with_updates(5_000)
                    .with_seed(8),
            )
            .unwrap()
        };
        let all = run(StoppingPolicy::WaitForAll);
        let earliest = run(StoppingPolicy::EarliestK { k: 4 });
        let pre = run(StoppingPolicy::PreSelectedK {
            k: 4,
            regroup: Regroup::PerUpdate,
        });
        assert_eq!(all, earliest);
        assert_eq!(all, pre);
        let exact = age_wait_for_all(1.0, 0.5, 4).unwrap().total;
        assert!((all.grand_mean - exact).abs() / exact < 0.05);
    }

    #[test]
    fn node_spread_shrinks_with_rounds() {
        let spread = |updates| {
            let cfg = SimConfig::new(8, StoppingPolicy::EarliestK { k: 2 }, exp(1.0))
                .with_updates(updates)
                .with_seed(10);
            let r = simulate(&cfg).unwrap();
            let max = r.per_node_avg_age.iter().copied().fold(f64::MIN, f64::max);
            let min = r.per_node_avg_age.iter().copied().fold(f64::MAX, f64::min);
            max - min
        };
        assert!(spread(400_000) < spread(4_000));
    }

    #[test]
    fn no_delivery_is_an_error() {
        let cfg = SimConfig::new(50, StoppingPolicy::EarliestK { k: 1 }, exp(1.0))
            .with_updates(3)
            .with_warmup(0);
        assert!(matches!(simulate(&cfg), Err(Error::NoDeliveries { .. })));
        let cfg = cfg.with_replications(2);
        assert!(matches!(
            replicate(&cfg),
            Err(Error::Replication { index: 0, .. })
        ));
    }

    #[test]
    fn short_runs_report_no_standard_error() {
        let cfg = SimConfig::new(2, StoppingPolicy::WaitForAll, exp(1.0)).with_updates(50);
        assert_eq!(simulate(&cfg).unwrap().std_error, None);
        let several = replicate(&cfg.with_replications(3)).unwrap();
        assert!(several.std_error.is_some_and(|s| s > 0.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SimConfig::new(3, StoppingPolicy::EarliestK { k: 2 }, exp(1.0));
        assert!(simulate(&base.clone().with_updates(0)).is_err());
        assert!(replicate(&base.clone().with_replications(0)).is_err());
        let mut bad = base.clone();
        bad.policy = StoppingPolicy::EarliestK { k: 4 };
        assert!(simulate(&bad).is_err());
        bad.n = 0;
        bad.policy = StoppingPolicy::WaitForAll;
        assert!(simulate(&bad).is_err());
    }

    #[test]
    fn replicate_single_equals_simulate_and_is_deterministic() {
        let cfg = SimConfig::new(3, StoppingPolicy::EarliestK { k: 2 }, exp(1.0))
            .with_updates(10_000)
            .with_seed(77);
        assert_eq!(replicate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let cfg = cfg.with_replications(4);
        assert_eq!(replicate(&cfg).unwrap(), replicate(&cfg).unwrap());
    }

    #[test]
    fn replication_shrinks_standard_error() {
        let cfg = SimConfig::new(100, StoppingPolicy::EarliestK { k: 50 }, exp(2.0))
            .with_updates(20_000)
            .with_seed(12);
        let one = simulate(&cfg).unwrap().std_error.unwrap();
        let many = replicate(&cfg.with_replications(16))
            .unwrap()
            .std_error
            .unwrap();
        let ratio = one / many;
        assert!((2.5..=6.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn trace_rows_follow_rounds() {
        let cfg = SimConfig::new(3, StoppingPolicy::EarliestK { k: 1 }, exp(1.0))
            .with_updates(40)
            .with_warmup(2)
            .with_seed(1);
        let mut buf = Vec::new();
        let traced = simulate_traced(&cfg, &mut buf).unwrap();
        assert_eq!(traced, simulate(&cfg).unwrap());
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "round,service_time,delivered,ages");
        assert_eq!(lines.len(), 1 + 42);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "0");
        assert_eq!(fields[2].split(';').count(), 1);
        assert_eq!(fields[3].split(';').count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn earliest_round_selects_k_smallest(
            delays in prop::collection::vec(0.0f64..10.0, 1..30),
            frac in 0.0f64..1.0,
        ) {
            let n = delays.len();
            let k = 1 + ((n - 1) as f64 * frac) as usize;
            let mut rng = RandomStream::new(0, 0);
            let r = run_round(StoppingPolicy::EarliestK { k }, &delays, &mut rng).unwrap();
            let mut sorted = delays.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(r.service_time, sorted[k - 1]);
            prop_assert_eq!(r.delivered.len(), k);
            prop_assert!(r.delivered.iter().all(|&i| delays[i] <= r.service_time));
        }

        #[test]
        fn preselected_round_delivers_group_and_faster_nodes(
            delays in prop::collection::vec(0.0f64..10.0, 1..30),
            frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let n = delays.len();
            let k = 1 + ((n - 1) as f64 * frac) as usize;
            let policy = StoppingPolicy::PreSelectedK { k, regroup: Regroup::PerUpdate };
            let mut engine = RoundEngine::new(policy, n).unwrap();
            let mut rng = RandomStream::new(seed, 1);
            let mut mask = vec![false; n];
            let y = engine.run(&delays, &mut rng, &mut mask);
            let group = engine.group().to_vec();
            prop_assert_eq!(group.len(), k);
            let max = group.iter().map(|&i| delays[i]).fold(f64::MIN, f64::max);
            prop_assert_eq!(y, max);
            for i in 0..n {
                prop_assert_eq!(mask[i], group.contains(&i) || delays[i] <= y);
            }
        }

        #[test]
        fn sawtooth_area_never_negative(gaps in prop::collection::vec((0.0f64..5.0, 0.0f64..1.0), 1..50)) {
            let mut s = NodeAgeState::fresh();
            let mut t = 0.0;
            for (gap, frac) in gaps {
                // Deliver an update generated somewhere inside the gap.
                let gen = s.last_gen_timestamp.max(t + gap * frac);
                t += gap;
                s.accumulate_delivery(t.max(gen), gen).unwrap();
                prop_assert!(s.area >= 0.0);
                prop_assert!(s.last_delivery_wall >= s.last_gen_timestamp);
            }
        }
    }
}
