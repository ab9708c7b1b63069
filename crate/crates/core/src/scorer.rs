//! Logistic scorer trained by full-batch gradient descent.
//!
//! Scores live in `[0, 1]`: near 1 means confidently clean, near 0
//! confidently attack. The loss is mean cross-entropy plus
//! `l2_penalty / 2 * |w|^2` (the bias is not penalised).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Demand, Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;

/// Half-width of the uniform initialisation interval.
const INIT_SCALE: f64 = 0.01;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ScorerParams {
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
}

#[derive(Deserialize)]
struct RawParams {
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
}

impl TryFrom<RawParams> for ScorerParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ScorerParams::new(raw.weights, raw.bias).and_then(|p| {
            if p.dim == raw.dim {
                Ok(p)
            } else {
                Err(Error::DimensionMismatch {
                    expected: raw.dim,
                    actual: p.dim,
                })
            }
        })
    }
}

impl ScorerParams {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("scorer needs at least one weight".into()));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("scorer parameters must be finite".into()));
        }
        Ok(ScorerParams {
            dim: weights.len(),
            weights,
            bias,
        })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                actual,
            })
        }
    }

    fn logit(&self, features: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    pub fn score(&self, d: &Demand) -> Result<f64> {
        self.check_dim(d.dim())?;
        Ok(sigmoid(self.logit(&d.features)))
    }

    /// `Clean` iff the score is strictly above `threshold`.
    pub fn classify(&self, d: &Demand, threshold: f64) -> Result<Label> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidParameter(format!(
                "threshold {threshold} outside [0, 1]"
            )));
        }
        Ok(label_at(self.score(d)?, threshold))
    }

    /// Scores for every demand of `ds`, in order.
    pub fn score_all(&self, ds: &LabeledDataset) -> Result<Vec<f64>> {
        self.check_dim(ds.dim())?;
        Ok(ds
            .demands()
            .iter()
            .map(|d| sigmoid(self.logit(&d.features)))
            .collect())
    }

    /// Fraction of `ds` classified correctly at `threshold`.
    pub fn accuracy(&self, ds: &LabeledDataset, threshold: f64) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scores = self.score_all(ds)?;
        let correct = scores
            .iter()
            .zip(ds.labels())
            .filter(|(&s, &l)| label_at(s, threshold) == l)
            .count();
        Ok(correct as f64 / ds.len() as f64)
    }
}

/// Thresholding rule shared by every module: ties go to `Attack`.
pub fn label_at(score: f64, threshold: f64) -> Label {
    if score > threshold {
        Label::Clean
    } else {
        Label::Attack
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 300,
            l2_penalty: 1e-4,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(self.l2_penalty.is_finite() && self.l2_penalty >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "l2_penalty must be non-negative, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }

    pub fn with_init_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }
}

/// Regularised mean cross-entropy of `p` on `ds`.
pub fn loss(p: &ScorerParams, ds: &LabeledDataset, l2_penalty: f64) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    p.check_dim(ds.dim())?;
    // -[y ln s + (1-y) ln(1-s)] = softplus(z) - y z
    let data: f64 = ds
        .iter()
        .map(|(d, l)| softplus(p.logit(&d.features)) - l.as_f64() * p.logit(&d.features))
        .sum::<f64>()
        / ds.len() as f64;
    let reg = 0.5 * l2_penalty * p.weights.iter().map(|w| w * w).sum::<f64>();
    Ok(data + reg)
}

/// Analytic gradient of [`loss`]: `(d/dw, d/db)`.
pub fn gradient(p: &ScorerParams, ds: &LabeledDataset, l2_penalty: f64) -> Result<(Vec<f64>, f64)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    p.check_dim(ds.dim())?;
    let mut gw = vec![0.0; p.dim];
    let mut gb = 0.0;
    for (d, l) in ds.iter() {
        let err = sigmoid(p.logit(&d.features)) - l.as_f64();
        for (g, x) in gw.iter_mut().zip(&d.features) {
            *g += err * x;
        }
        gb += err;
    }
    let n = ds.len() as f64;
    for (g, w) in gw.iter_mut().zip(&p.weights) {
        *g = *g / n + l2_penalty * w;
    }
    Ok((gw, gb / n))
}

fn descend(mut p: ScorerParams, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<ScorerParams> {
    for _ in 0..cfg.epochs {
        let (gw, gb) = gradient(&p, ds, cfg.l2_penalty)?;
        for (w, g) in p.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * g;
        }
        p.bias -= cfg.learning_rate * gb;
    }
    if p.weights.iter().any(|w| !w.is_finite()) || !p.bias.is_finite() {
        return Err(Error::InvalidParameter(
            "training diverged; lower the learning rate".into(),
        ));
    }
    Ok(p)
}

/// Trains a fresh scorer from a small seeded initialisation.
///
/// A single-class `ds` is accepted and yields a scorer leaning toward that
/// class.
pub fn train(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<ScorerParams> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng::seeded(cfg.init_seed);
    let weights = (0..ds.dim())
        .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
        .collect();
    let bias = rng.random_range(-INIT_SCALE..=INIT_SCALE);
    descend(ScorerParams::new(weights, bias)?, ds, cfg)
}

/// Continues gradient descent from `p` (warm start); `cfg.init_seed` is
/// ignored.
pub fn retrain(p: &ScorerParams, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<ScorerParams> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    p.check_dim(ds.dim())?;
    descend(p.clone(), ds, cfg)
}
