//! Failure-correlation statistics for diverse channels.
//!
//! Difficulty model: a demand `d` has difficulty `theta_d`, the probability
//! that a randomly drawn version fails on it. Two independently drawn
//! versions both fail on `d` with probability `theta_d^2`, so the expected
//! pfd of a 1-out-of-2 pair is `mean(theta^2)`, never less than the
//! `mean(theta)^2` an independence assumption would predict.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelOutcome {
    pub demand_id: u64,
    pub failed: bool,
    /// Class of the value produced; two failures with equal tags are
    /// identical failures.
    pub output_tag: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelResults {
    outcomes: Vec<ChannelOutcome>,
}

impl ChannelResults {
    pub fn new(outcomes: Vec<ChannelOutcome>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(outcomes.len());
        if let Some(dup) = outcomes.iter().find(|o| !seen.insert(o.demand_id)) {
            return Err(Error::IdMismatch(format!("duplicate demand id {}", dup.demand_id)));
        }
        Ok(ChannelResults { outcomes })
    }

    /// Outcomes for demands `0..failed.len()`, all with output tag 0.
    pub fn from_failures(failed: &[bool]) -> Self {
        ChannelResults {
            outcomes: failed
                .iter()
                .enumerate()
                .map(|(i, &failed)| ChannelOutcome {
                    demand_id: i as u64,
                    failed,
                    output_tag: 0,
                })
                .collect(),
        }
    }

    pub fn outcomes(&self) -> &[ChannelOutcome] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.failed).count()
    }
}

/// 2x2 joint pass/fail counts for a channel pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointFailureTable {
    n: usize,
    both_fail: usize,
    only_a: usize,
    only_b: usize,
    neither: usize,
    both_fail_identical: usize,
}

impl JointFailureTable {
    pub fn new(both_fail: usize, only_a: usize, only_b: usize, neither: usize, both_fail_identical: usize) -> Result<Self> {
        let n = both_fail + only_a + only_b + neither;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if both_fail_identical > both_fail {
            return Err(Error::InvalidParameter(format!(
                "{both_fail_identical} identical failures exceed {both_fail} joint failures"
            )));
        }
        Ok(JointFailureTable {
            n,
            both_fail,
            only_a,
            only_b,
            neither,
            both_fail_identical,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn both_fail(&self) -> usize {
        self.both_fail
    }
    pub fn only_a(&self) -> usize {
        self.only_a
    }
    pub fn only_b(&self) -> usize {
        self.only_b
    }
    pub fn neither(&self) -> usize {
        self.neither
    }
    pub fn both_fail_identical(&self) -> usize {
        self.both_fail_identical
    }

    pub fn pfd_a(&self) -> f64 {
        (self.both_fail + self.only_a) as f64 / self.n as f64
    }

    pub fn pfd_b(&self) -> f64 {
        (self.both_fail + self.only_b) as f64 / self.n as f64
    }
}

/// Joint counts over two channels observed on the same demands.
pub fn joint_failures(a: &ChannelResults, b: &ChannelResults) -> Result<JointFailureTable> {
    if a.len() != b.len() {
        return Err(Error::IdMismatch(format!(
            "channel a saw {} demands, channel b {}",
            a.len(),
            b.len()
        )));
    }
    let by_id: std::collections::HashMap<u64, &ChannelOutcome> =
        b.outcomes.iter().map(|o| (o.demand_id, o)).collect();
    let (mut both, mut only_a, mut only_b, mut neither, mut identical) = (0, 0, 0, 0, 0);
    for oa in &a.outcomes {
        let ob = by_id
            .get(&oa.demand_id)
            .ok_or_else(|| Error::IdMismatch(format!("demand {} missing from channel b", oa.demand_id)))?;
        match (oa.failed, ob.failed) {
            (true, true) => {
                both += 1;
                if oa.output_tag == ob.output_tag {
                    identical += 1;
                }
            }
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            (false, false) => neither += 1,
        }
    }
    JointFailureTable::new(both, only_a, only_b, neither, identical)
}

/// Empirical probability of failure on demand.
pub fn pfd(c: &ChannelResults) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(c.failures() as f64 / c.len() as f64)
}

/// pfd of a 1-out-of-2 pair: both channels fail. With `identical_only`,
/// only failures producing the same output count.
pub fn pair_pfd(t: &JointFailureTable, identical_only: bool) -> f64 {
    let joint = if identical_only {
        t.both_fail_identical
    } else {
        t.both_fail
    };
    joint as f64 / t.n as f64
}

pub fn independence_pfd(pa: f64, pb: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&pa) && (0.0..=1.0).contains(&pb));
    pa * pb
}

/// `single / pair`, or a marker when no joint failure was observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImprovementFactor {
    Finite(f64),
    NoJointFailures,
}

pub const NO_JOINT_FAILURES: &str = "no observed joint failures";

impl ImprovementFactor {
    pub fn value(&self) -> Option<f64> {
        match self {
            ImprovementFactor::Finite(v) => Some(*v),
            ImprovementFactor::NoJointFailures => None,
        }
    }
}

impl fmt::Display for ImprovementFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImprovementFactor::Finite(v) => write!(f, "{v}"),
            ImprovementFactor::NoJointFailures => f.write_str(NO_JOINT_FAILURES),
        }
    }
}

impl Serialize for ImprovementFactor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ImprovementFactor::Finite(v) => s.serialize_f64(*v),
            ImprovementFactor::NoJointFailures => s.serialize_str(NO_JOINT_FAILURES),
        }
    }
}

impl<'de> Deserialize<'de> for ImprovementFactor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ImprovementFactor::Finite(v)),
            Raw::Text(t) if t == NO_JOINT_FAILURES => Ok(ImprovementFactor::NoJointFailures),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected improvement factor {t:?}"))),
        }
    }
}

pub fn improvement_factor(single_pfd: f64, pair_pfd: f64) -> Result<ImprovementFactor> {
    if single_pfd <= 0.0 {
        return Err(Error::SingleChannelNeverFails);
    }
    if pair_pfd == 0.0 {
        Ok(ImprovementFactor::NoJointFailures)
    } else {
        Ok(ImprovementFactor::Finite(single_pfd / pair_pfd))
    }
}

/// Per-demand difficulties.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifficultyProfile {
    theta: Vec<f64>,
}

impl DifficultyProfile {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidParameter("difficulty profile is empty".into()));
        }
        if let Some(t) = theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidParameter(format!("difficulty {t} outside [0, 1]")));
        }
        Ok(DifficultyProfile { theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Difficulty of demand `index`, cycling through the profile.
    pub fn at(&self, index: usize) -> f64 {
        self.theta[index % self.theta.len()]
    }

    /// Every difficulty multiplied by `factor`, clamped to 1.
    pub fn scaled(&self, factor: f64) -> Result<DifficultyProfile> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::InvalidParameter(format!("scale {factor} must be non-negative")));
        }
        DifficultyProfile::new(self.theta.iter().map(|t| (t * factor).min(1.0)).collect())
    }

    pub fn is_constant(&self) -> bool {
        self.theta.iter().all(|&t| t == self.theta[0])
    }

    /// `mean(theta^2) - mean(theta)^2`, computed as the mean squared
    /// deviation so it is never negative.
    pub fn jensen_gap(&self) -> f64 {
        let m = expected_single_pfd(self);
        self.theta.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / self.theta.len() as f64
    }
}

pub fn expected_single_pfd(profile: &DifficultyProfile) -> f64 {
    profile.theta.iter().sum::<f64>() / profile.theta.len() as f64
}

/// `mean(theta^2)`: pfd of a pair of independently drawn versions.
pub fn expected_pair_pfd(profile: &DifficultyProfile) -> f64 {
    profile.theta.iter().map(|t| t * t).sum::<f64>() / profile.theta.len() as f64
}

/// Standard error of a rate `p` estimated from `trials` Bernoulli trials.
pub fn binomial_se(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Shape of a difficulty profile, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// Every demand has difficulty `theta`.
    Constant { demands: usize, theta: f64 },
    /// `theta_d = scale * q_d^exponent` with `q_d = (d + 0.5) / demands`:
    /// most demands are easy and a thin tail is hard.
    Power {
        demands: usize,
        exponent: f64,
        scale: f64,
    },
    Explicit { theta: Vec<f64> },
}

impl ProfileSpec {
    pub fn build(&self) -> Result<DifficultyProfile> {
        match self {
            ProfileSpec::Constant { demands, theta } => DifficultyProfile::new(vec![*theta; *demands]),
            ProfileSpec::Power {
                demands,
                exponent,
                scale,
            } => {
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(Error::InvalidParameter(format!("exponent {exponent} must be non-negative")));
                }
                let n = *demands as f64;
                DifficultyProfile::new(
                    (0..*demands)
                        .map(|d| scale * ((d as f64 + 0.5) / n).powf(*exponent))
                        .collect(),
                )
            }
            ProfileSpec::Explicit { theta } => DifficultyProfile::new(theta.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationResult {
    pub n_demands: usize,
    pub n_versions: usize,
    pub n_pairs: usize,
    pub mean_single_pfd: f64,
    pub mean_pair_pfd: f64,
    /// `None` when no version ever failed.
    pub empirical_improvement: Option<ImprovementFactor>,
    pub analytic_single_pfd: f64,
    pub analytic_pair_pfd: f64,
    /// Binomial standard error of the pair pfd over `n_demands * n_pairs`
    /// trials at the analytic rate.
    pub pair_pfd_se: f64,
}

/// Failure set of one version, one bit per demand.
struct FailureSet {
    words: Vec<u64>,
    failures: usize,
}

impl FailureSet {
    fn draw(profile: &DifficultyProfile, seed: u64, version: u64) -> Self {
        let mut r = rng::stream(seed, version);
        let mut words = vec![0u64; profile.len().div_ceil(64)];
        let mut failures = 0;
        for (d, &theta) in profile.theta.iter().enumerate() {
            if r.random::<f64>() < theta {
                words[d / 64] |= 1 << (d % 64);
                failures += 1;
            }
        }
        FailureSet { words, failures }
    }

    fn joint(&self, other: &FailureSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

/// Unranks `t` in `0..n(n-1)/2` to the pair `(i, j)` with `j < i`.
fn unrank_pair(t: usize) -> (usize, usize) {
    let mut i = ((1.0 + (1.0 + 8.0 * t as f64).sqrt()) / 2.0) as usize;
    while i * (i - 1) / 2 > t {
        i -= 1;
    }
    while (i + 1) * i / 2 <= t {
        i += 1;
    }
    (i, t - i * (i - 1) / 2)
}

/// Draws `n_versions` versions from the difficulty model and measures
/// `n_pairs` distinct pairs among them.
///
/// Version `v` fails demand `d` independently with probability `theta_d`,
/// using its own random stream, so results do not depend on thread count.
pub fn population_experiment(
    profile: &DifficultyProfile,
    n_versions: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<PopulationResult> {
    if n_versions < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 versions, got {n_versions}")));
    }
    let available = n_versions * (n_versions - 1) / 2;
    if n_pairs == 0 || n_pairs > available {
        return Err(Error::InvalidParameter(format!(
            "n_pairs must be in 1..={available} for {n_versions} versions, got {n_pairs}"
        )));
    }
    let versions: Vec<FailureSet> = (0..n_versions as u64)
        .into_par_iter()
        .map(|v| FailureSet::draw(profile, seed, v))
        .collect();
    let mut pair_rng = rng::stream(seed, u64::MAX);
    let pairs: Vec<(usize, usize)> = index::sample(&mut pair_rng, available, n_pairs)
        .into_iter()
        .map(unrank_pair)
        .collect();
    let joint: Vec<usize> = pairs.par_iter().map(|&(i, j)| versions[i].joint(&versions[j])).collect();

    let n = profile.len() as f64;
    let mean_single_pfd = versions.iter().map(|v| v.failures as f64 / n).sum::<f64>() / n_versions as f64;
    let mean_pair_pfd = joint.iter().map(|&c| c as f64 / n).sum::<f64>() / n_pairs as f64;
    let analytic_pair_pfd = expected_pair_pfd(profile);
    Ok(PopulationResult {
        n_demands: profile.len(),
        n_versions,
        n_pairs,
        mean_single_pfd,
        mean_pair_pfd,
        empirical_improvement: improvement_factor(mean_single_pfd, mean_pair_pfd).ok(),
        analytic_single_pfd: expected_single_pfd(profile),
        analytic_pair_pfd,
        pair_pfd_se: binomial_se(analytic_pair_pfd, profile.len() * n_pairs),
    })
}
