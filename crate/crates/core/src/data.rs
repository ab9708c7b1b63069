//! Datasets, splits and score ranges.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng;

/// Binary class label. `Clean` (1) sits at the score pole near 1, `Attack`
/// (0) at the pole near 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Attack = 0,
    Clean = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Attack),
            1 => Some(Label::Clean),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

/// One input submitted for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub id: u64,
    pub features: Vec<f64>,
}

impl Demand {
    pub fn new(id: u64, features: Vec<f64>) -> Self {
        Demand { id, features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Demands paired with binary labels. Construction checks that ids are
/// unique, features finite and every vector has the declared length.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    demands: Vec<Demand>,
    labels: Vec<Label>,
}

impl LabeledDataset {
    pub fn new(dim: usize, demands: Vec<Demand>, labels: Vec<Label>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("dimensionality must be positive".into()));
        }
        if demands.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} demands but {} labels",
                demands.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::with_capacity(demands.len());
        for d in &demands {
            if d.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: d.features.len(),
                });
            }
            if let Some(bad) = d.features.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidFeatures(format!(
                    "demand {} has non-finite feature {bad}",
                    d.id
                )));
            }
            if !seen.insert(d.id) {
                return Err(Error::InvalidDataset(format!("duplicate demand id {}", d.id)));
            }
        }
        Ok(LabeledDataset {
            dim,
            demands,
            labels,
        })
    }

    /// An empty dataset of the given dimensionality.
    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.demands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demands.is_empty()
    }

    pub fn demands(&self) -> &[Demand] {
        &self.demands
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Demand, Label)> + '_ {
        self.demands.iter().zip(self.labels.iter().copied())
    }

    pub fn ids(&self) -> Vec<u64> {
        self.demands.iter().map(|d| d.id).collect()
    }

    /// `(attack count, clean count)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let clean = self.labels.iter().filter(|&&l| l == Label::Clean).count();
        (self.len() - clean, clean)
    }

    /// True when both classes are present.
    pub fn has_both_classes(&self) -> bool {
        let (attack, clean) = self.class_counts();
        attack > 0 && clean > 0
    }

    /// Items at `indices`, in that order. Indices must be distinct.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            dim: self.dim,
            demands: indices.iter().map(|&i| self.demands[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Items for which `keep` returns true, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Demand, Label) -> bool) -> LabeledDataset {
        let idx: Vec<usize> = self
            .iter()
            .enumerate()
            .filter(|(_, (d, l))| keep(d, *l))
            .map(|(i, _)| i)
            .collect();
        self.select(&idx)
    }

    /// Concatenation of `self` and `other`; ids must stay unique.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut demands = self.demands.clone();
        demands.extend(other.demands.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledDataset::new(self.dim, demands, labels)
    }
}

/// Fractions for a seeded random split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSplitSpec")]
pub struct SplitSpec {
    fractions: Vec<f64>,
    seed: u64,
}

#[derive(Deserialize)]
struct RawSplitSpec {
    fractions: Vec<f64>,
    seed: u64,
}

impl TryFrom<RawSplitSpec> for SplitSpec {
    type Error = Error;

    fn try_from(raw: RawSplitSpec) -> Result<Self> {
        SplitSpec::new(raw.fractions, raw.seed)
    }
}

impl SplitSpec {
    pub fn new(fractions: Vec<f64>, seed: u64) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::InvalidSplit("no fractions".into()));
        }
        if let Some(f) = fractions.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(Error::InvalidSplit(format!("fraction {f} is not positive")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(SplitSpec { fractions, seed })
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            fractions: self.fractions.clone(),
            seed,
        }
    }

    /// Part sizes for `n` items: `floor(f_k * n)` each, with the remainder
    /// handed one apiece to the earliest parts whose exact share is
    /// fractional.
    pub fn part_sizes(&self, n: usize) -> Vec<usize> {
        let exact: Vec<f64> = self.fractions.iter().map(|f| f * n as f64).collect();
        // Absorb representation error such as 0.29 * 100 = 28.999999999999996.
        let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
        let mut total: usize = sizes.iter().sum();
        for s in sizes.iter_mut().rev() {
            if total <= n {
                break;
            }
            let cut = (*s).min(total - n);
            *s -= cut;
            total -= cut;
        }
        let mut remainder = n - total;
        for (s, x) in sizes.iter_mut().zip(&exact) {
            if remainder == 0 {
                break;
            }
            if (x - x.round()).abs() > 1e-9 {
                *s += 1;
                remainder -= 1;
            }
        }
        // Only reachable when the sum drifted under n; keep coverage.
        for s in sizes.iter_mut() {
            if remainder == 0 {
                break;
            }
            *s += 1;
            remainder -= 1;
        }
        sizes
    }
}

/// Splits `ds` into disjoint parts after a seeded uniform shuffle. Not
/// stratified by class.
pub fn split_dataset(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Vec<LabeledDataset>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::seeded(spec.seed));
    let mut parts = Vec::with_capacity(spec.fractions.len());
    let mut start = 0;
    for size in spec.part_sizes(ds.len()) {
        parts.push(ds.select(&order[start..start + size]));
        start += size;
    }
    Ok(parts)
}

/// Closed confidence interval `[a, b]` inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoreRange")]
pub struct ScoreRange {
    a: f64,
    b: f64,
}

#[derive(Deserialize)]
struct RawScoreRange {
    a: f64,
    b: f64,
}

impl TryFrom<RawScoreRange> for ScoreRange {
    type Error = Error;

    fn try_from(raw: RawScoreRange) -> Result<Self> {
        ScoreRange::new(raw.a, raw.b)
    }
}

impl ScoreRange {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(Error::InvalidParameter(format!(
                "score range [{a}, {b}] must satisfy 0 <= a <= b <= 1"
            )));
        }
        Ok(ScoreRange { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Boundary scores count as inside.
    pub fn contains(&self, score: f64) -> bool {
        self.a <= score && score <= self.b
    }
}
