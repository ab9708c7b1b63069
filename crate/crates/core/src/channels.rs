//! Simulated channel architectures: symmetric diverse pairs, a trusted
//! channel with an advisory checker, and a router feeding two specialists.
//!
//! Channel failures are Bernoulli per demand. Correlation between channels
//! enters only through a shared difficulty profile. Draws for demand `i`
//! come from random stream `i`, so a run is reproducible from its seed
//! regardless of evaluation order.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Demand, Label, LabeledDataset};
use crate::diversity::{DifficultyProfile, ProfileSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::scorer::{self, ScorerParams, TrainConfig};

/// A sensor reading: whether an object was detected, and the distance
/// reported (metres), if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub detected: bool,
    pub distance: Option<f64>,
}

/// Closed interval of plausible distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plausible {
    pub min: f64,
    pub max: f64,
}

impl Plausible {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::InvalidParameter(format!("empty plausible interval [{min}, {max}]")));
        }
        Ok(Plausible { min, max })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.min <= x && x <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inconsistency {
    MissingDistance,
    SpuriousDistance,
    ImplausibleDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    Consistent,
    Inconsistent(Inconsistency),
}

/// A detection must come with a plausible distance; no detection must come
/// with no distance.
pub fn consistency_check(r: &SensorReading, plausible: &Plausible) -> Consistency {
    use Inconsistency::*;
    match (r.detected, r.distance) {
        (true, Some(d)) if plausible.contains(d) => Consistency::Consistent,
        (true, Some(_)) => Consistency::Inconsistent(ImplausibleDistance),
        (true, None) => Consistency::Inconsistent(MissingDistance),
        (false, None) => Consistency::Consistent,
        (false, Some(_)) => Consistency::Inconsistent(SpuriousDistance),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FailureSource {
    /// Fails every demand with the same probability.
    Constant(f64),
    /// Fails demand `i` with probability `theta[i mod len]`.
    Profile(ProfileSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Misses the object.
    #[default]
    Detection,
    /// Reports a wrong distance.
    Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    pub failure: FailureSource,
    #[serde(default)]
    pub mode: FailureMode,
}

impl ChannelSpec {
    pub fn constant(name: &str, p: f64) -> Self {
        ChannelSpec {
            name: name.to_string(),
            failure: FailureSource::Constant(p),
            mode: FailureMode::Detection,
        }
    }

    pub fn profile(name: &str, profile: ProfileSpec) -> Self {
        ChannelSpec {
            name: name.to_string(),
            failure: FailureSource::Profile(profile),
            mode: FailureMode::Detection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    fn resolve(&self) -> Result<Resolved> {
        match &self.failure {
            FailureSource::Constant(p) if (0.0..=1.0).contains(p) => Ok(Resolved::Constant(*p)),
            FailureSource::Constant(p) => Err(Error::InvalidParameter(format!(
                "channel {}: probability {p} outside [0, 1]",
                self.name
            ))),
            FailureSource::Profile(spec) => Ok(Resolved::Profile(spec.build()?)),
        }
    }
}

enum Resolved {
    Constant(f64),
    Profile(DifficultyProfile),
}

impl Resolved {
    fn at(&self, demand: usize) -> f64 {
        match self {
            Resolved::Constant(p) => *p,
            Resolved::Profile(p) => p.at(demand),
        }
    }
}

/// `(a fails, b fails)` for each demand.
fn draw_failures(a: &ChannelSpec, b: &ChannelSpec, n: usize, seed: u64) -> Result<Vec<(bool, bool)>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n_demands must be at least 1".into()));
    }
    let (ra, rb) = (a.resolve()?, b.resolve()?);
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let ua: f64 = r.random();
            let ub: f64 = r.random();
            (ua < ra.at(i), ub < rb.at(i))
        })
        .collect())
}

/// Mean over the first `n_demands` demands of `p_a(i) * p_b(i)`: the
/// expected both-fail rate when the channels fail independently given the
/// demand.
pub fn expected_joint_failure_rate(a: &ChannelSpec, b: &ChannelSpec, n_demands: usize) -> Result<f64> {
    if n_demands == 0 {
        return Err(Error::InvalidParameter("n_demands must be at least 1".into()));
    }
    let (ra, rb) = (a.resolve()?, b.resolve()?);
    Ok((0..n_demands).map(|i| ra.at(i) * rb.at(i)).sum::<f64>() / n_demands as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairPolicy {
    /// Hazard demands: the pair misses only when both channels fail.
    BothMustFail,
    /// Benign demands: a failure of either channel raises a spurious flag.
    EitherFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub a_fail: usize,
    pub b_fail: usize,
    pub both_fail: usize,
    pub either_fail: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRates {
    pub a_fail: f64,
    pub b_fail: f64,
    /// Missed-hazard rate of a 1-out-of-2 detection pair.
    pub both_fail: f64,
    /// Spurious-flag rate on benign demands.
    pub either_fail: f64,
    /// The rate selected by the policy.
    pub system_failure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub n: usize,
    pub seed: u64,
    pub policy: PairPolicy,
    pub a: ChannelSpec,
    pub b: ChannelSpec,
    pub counts: PairCounts,
    pub rates: PairRates,
}

pub fn simulate_pair(a: &ChannelSpec, b: &ChannelSpec, n_demands: usize, policy: PairPolicy, seed: u64) -> Result<PairStats> {
    let draws = draw_failures(a, b, n_demands, seed)?;
    let mut c = PairCounts {
        a_fail: 0,
        b_fail: 0,
        both_fail: 0,
        either_fail: 0,
    };
    for &(fa, fb) in &draws {
        c.a_fail += usize::from(fa);
        c.b_fail += usize::from(fb);
        c.both_fail += usize::from(fa && fb);
        c.either_fail += usize::from(fa || fb);
    }
    let n = n_demands as f64;
    let both = c.both_fail as f64 / n;
    let either = c.either_fail as f64 / n;
    Ok(PairStats {
        n: n_demands,
        seed,
        policy,
        a: a.clone(),
        b: b.clone(),
        counts: c,
        rates: PairRates {
            a_fail: c.a_fail as f64 / n,
            b_fail: c.b_fail as f64 / n,
            both_fail: both,
            either_fail: either,
            system_failure: match policy {
                PairPolicy::BothMustFail => both,
                PairPolicy::EitherFlags => either,
            },
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerCounts {
    pub both_correct: usize,
    /// Trusted wrong, checker right: disagreement flagged.
    pub caught: usize,
    /// Both wrong: unflagged system failure.
    pub undermining: usize,
    /// Trusted right, checker wrong: spurious flag.
    pub nuisance: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckerRates {
    pub both_correct: f64,
    pub caught: f64,
    pub undermining: f64,
    pub nuisance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerStats {
    pub n: usize,
    pub seed: u64,
    pub trusted: ChannelSpec,
    pub checker: ChannelSpec,
    pub counts: CheckerCounts,
    pub rates: CheckerRates,
}

/// A trusted channel produces the output; an advisory checker only flags
/// disagreement.
pub fn simulate_trusted_checker(trusted: &ChannelSpec, checker: &ChannelSpec, n_demands: usize, seed: u64) -> Result<CheckerStats> {
    let draws = draw_failures(trusted, checker, n_demands, seed)?;
    let mut c = CheckerCounts {
        both_correct: 0,
        caught: 0,
        undermining: 0,
        nuisance: 0,
    };
    for &(t, k) in &draws {
        match (t, k) {
            (false, false) => c.both_correct += 1,
            (true, false) => c.caught += 1,
            (true, true) => c.undermining += 1,
            (false, true) => c.nuisance += 1,
        }
    }
    let n = n_demands as f64;
    Ok(CheckerStats {
        n: n_demands,
        seed,
        trusted: trusted.clone(),
        checker: checker.clone(),
        counts: c,
        rates: CheckerRates {
            both_correct: c.both_correct as f64 / n,
            caught: c.caught as f64 / n,
            undermining: c.undermining as f64 / n,
            nuisance: c.nuisance as f64 / n,
        },
    })
}

/// Binary router in front of two specialist models. A router label of
/// `Attack` selects route 0, `Clean` route 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterSpec {
    router: ScorerParams,
    specialists: [ScorerParams; 2],
}

impl RouterSpec {
    pub fn new(router: ScorerParams, specialists: [ScorerParams; 2]) -> Result<Self> {
        for s in &specialists {
            if s.dim() != router.dim() {
                return Err(Error::DimensionMismatch {
                    expected: router.dim(),
                    actual: s.dim(),
                });
            }
        }
        Ok(RouterSpec { router, specialists })
    }

    pub fn router(&self) -> &ScorerParams {
        &self.router
    }

    pub fn specialists(&self) -> &[ScorerParams; 2] {
        &self.specialists
    }
}

/// `(output label, route taken)`.
pub fn route_predict(r: &RouterSpec, d: &Demand, threshold: f64) -> Result<(Label, usize)> {
    let route = r.router.classify(d, threshold)?.as_u8() as usize;
    let label = r.specialists[route].classify(d, threshold)?;
    Ok((label, route))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteShare {
    pub count: usize,
    pub correct: usize,
    /// `count / n`.
    pub weight: f64,
    pub conditional_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterMetrics {
    pub n: usize,
    pub routing_accuracy: f64,
    /// Fraction of demands sent to the wrong specialist.
    pub confusion_factor: f64,
    pub end_to_end_accuracy: f64,
    /// Indexed by route taken.
    pub per_route: [RouteShare; 2],
}

impl RouterMetrics {
    /// `sum over routes of weight * conditional accuracy`.
    pub fn decomposed_accuracy(&self) -> f64 {
        self.per_route
            .iter()
            .filter_map(|s| s.conditional_accuracy.map(|a| s.weight * a))
            .sum()
    }
}

pub fn router_metrics(r: &RouterSpec, ds: &LabeledDataset, true_routes: &[usize], threshold: f64) -> Result<RouterMetrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if true_routes.len() != ds.len() {
        return Err(Error::InvalidParameter(format!(
            "{} routes for {} demands",
            true_routes.len(),
            ds.len()
        )));
    }
    if let Some(bad) = true_routes.iter().find(|&&t| t > 1) {
        return Err(Error::InvalidParameter(format!("route {bad} is not 0 or 1")));
    }
    let mut routed_right = 0usize;
    let mut counts = [(0usize, 0usize); 2];
    for ((d, truth), &want) in ds.iter().zip(true_routes) {
        let (label, route) = route_predict(r, d, threshold)?;
        routed_right += usize::from(route == want);
        counts[route].0 += 1;
        counts[route].1 += usize::from(label == truth);
    }
    let n = ds.len() as f64;
    let share = |(count, correct): (usize, usize)| RouteShare {
        count,
        correct,
        weight: count as f64 / n,
        conditional_accuracy: (count > 0).then(|| correct as f64 / count as f64),
    };
    let routing_accuracy = routed_right as f64 / n;
    Ok(RouterMetrics {
        n: ds.len(),
        routing_accuracy,
        confusion_factor: (ds.len() - routed_right) as f64 / n,
        end_to_end_accuracy: (counts[0].1 + counts[1].1) as f64 / n,
        per_route: [share(counts[0]), share(counts[1])],
    })
}

/// Trains the router on the route labels and each specialist on its own
/// route's demands. Specialist `k` uses `cfg.init_seed + 1 + k`.
pub fn train_router(ds: &LabeledDataset, true_routes: &[usize], cfg: &TrainConfig) -> Result<RouterSpec> {
    if true_routes.len() != ds.len() {
        return Err(Error::InvalidParameter(format!(
            "{} routes for {} demands",
            true_routes.len(),
            ds.len()
        )));
    }
    let route_labels = true_routes
        .iter()
        .map(|&t| Label::from_u8(t as u8).ok_or_else(|| Error::InvalidParameter(format!("route {t} is not 0 or 1"))))
        .collect::<Result<Vec<_>>>()?;
    let route_ds = LabeledDataset::new(ds.dim(), ds.demands().to_vec(), route_labels)?;
    let router = scorer::train(&route_ds, cfg)?;
    let mut specialists = Vec::with_capacity(2);
    for k in 0..2 {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| true_routes[i] == k).collect();
        if idx.is_empty() {
            return Err(Error::InvalidDataset(format!("no training demands for route {k}")));
        }
        specialists.push(scorer::train(&ds.select(&idx), &cfg.with_init_seed(cfg.init_seed.wrapping_add(1 + k as u64)))?);
    }
    let specialists: [ScorerParams; 2] = specialists.try_into().expect("two specialists");
    RouterSpec::new(router, specialists)
}
