//! Difficulty-driven cascade ensemble.
//!
//! Model 0 is trained on half of the available data. Its training set is
//! then split by confidence: demands whose score falls inside the closed
//! range `[a, b]` are "difficult" and become the sole training set of the
//! next model; confidently handled demands are excluded rather than
//! reweighted. At prediction time a demand is passed down the chain until
//! some model scores it outside `[a, b]`; the last model always decides.

use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, Demand, Label, LabeledDataset, ScoreRange, SplitSpec};
use crate::error::{Error, Result};
use crate::scorer::{self, label_at, ScorerParams, TrainConfig, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionResult {
    pub easy: LabeledDataset,
    pub difficult: LabeledDataset,
}

/// Splits `ds` by the closed-interval rule: difficult iff `a <= S(D) <= b`.
/// Each part keeps the order of `ds`.
pub fn partition_by_confidence(
    p: &ScorerParams,
    ds: &LabeledDataset,
    range: ScoreRange,
) -> Result<PartitionResult> {
    let scores = p.score_all(ds)?;
    let (hard, easy): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| range.contains(scores[i]));
    Ok(PartitionResult {
        easy: ds.select(&easy),
        difficult: ds.select(&hard),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnsemble")]
pub struct CascadeEnsemble {
    range: ScoreRange,
    final_tie_threshold: f64,
    models: Vec<ScorerParams>,
}

#[derive(Deserialize)]
struct RawEnsemble {
    range: ScoreRange,
    #[serde(default = "default_tie")]
    final_tie_threshold: f64,
    models: Vec<ScorerParams>,
}

fn default_tie() -> f64 {
    DEFAULT_THRESHOLD
}

impl TryFrom<RawEnsemble> for CascadeEnsemble {
    type Error = Error;

    fn try_from(raw: RawEnsemble) -> Result<Self> {
        CascadeEnsemble::new(raw.models, raw.range, raw.final_tie_threshold)
    }
}

impl CascadeEnsemble {
    pub fn new(models: Vec<ScorerParams>, range: ScoreRange, final_tie_threshold: f64) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::InvalidParameter("cascade needs at least one model".into()))?;
        if let Some(m) = models.iter().find(|m| m.dim() != first.dim()) {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                actual: m.dim(),
            });
        }
        if !(0.0..=1.0).contains(&final_tie_threshold) {
            return Err(Error::InvalidParameter(format!(
                "final_tie_threshold {final_tie_threshold} outside [0, 1]"
            )));
        }
        Ok(CascadeEnsemble {
            range,
            final_tie_threshold,
            models,
        })
    }

    pub fn models(&self) -> &[ScorerParams] {
        &self.models
    }

    pub fn range(&self) -> ScoreRange {
        self.range
    }

    pub fn final_tie_threshold(&self) -> f64 {
        self.final_tie_threshold
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn depth(&self) -> usize {
        self.models.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeDecision {
    pub label: Label,
    pub deciding_model: usize,
    pub deciding_score: f64,
}

/// Truth-table adjudicator over an ordered score vector.
///
/// Scores after the deciding model are never read. When the last model is
/// still undecided its raw score is kept and binarised at
/// `final_tie_threshold` (ties to `Attack`).
pub fn adjudicate(scores: &[f64], range: ScoreRange, final_tie_threshold: f64) -> Result<CascadeDecision> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("adjudicate needs at least one score".into()));
    }
    for (k, &s) in scores.iter().enumerate() {
        if let Some(d) = decide_at(k, s, scores.len(), range, final_tie_threshold) {
            return Ok(d);
        }
    }
    unreachable!("the last score always decides")
}

/// One row of the truth table: model `k` of `n` scored `s`.
fn decide_at(k: usize, s: f64, n: usize, range: ScoreRange, tie: f64) -> Option<CascadeDecision> {
    let label = if s < range.a() {
        Label::Attack
    } else if s > range.b() {
        Label::Clean
    } else if k + 1 == n {
        label_at(s, tie)
    } else {
        return None;
    };
    Some(CascadeDecision {
        label,
        deciding_model: k,
        deciding_score: s,
    })
}

/// Scores model by model, stopping at the first confident one.
pub fn cascade_predict(e: &CascadeEnsemble, d: &Demand) -> Result<CascadeDecision> {
    let n = e.models.len();
    for (k, m) in e.models.iter().enumerate() {
        let s = m.score(d)?;
        if let Some(dec) = decide_at(k, s, n, e.range, e.final_tie_threshold) {
            return Ok(dec);
        }
    }
    unreachable!("the last model always decides")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationReason {
    EmptyDifficultSet,
    SingleClassDifficultSet,
}

/// Why a build stopped before the requested depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    /// Index of the model that could not be trained.
    pub stage: usize,
    pub reason: TruncationReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub requested_depth: usize,
    /// `stage_training_ids[k]` are the ids Model k was trained on.
    pub stage_training_ids: Vec<Vec<u64>>,
    pub truncation: Option<Truncation>,
}

impl BuildInfo {
    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stage_training_ids.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CascadeBuild {
    pub ensemble: CascadeEnsemble,
    pub holdout: LabeledDataset,
    pub info: BuildInfo,
}

/// Builds a cascade of at most `depth` models.
///
/// `available` is split 50/50 with `seed`; the first half trains Model 0 and
/// the second half is returned untouched as holdout. Model `k` is trained
/// with `cfg.init_seed + k`.
pub fn build_cascade(
    available: &LabeledDataset,
    depth: usize,
    range: ScoreRange,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CascadeBuild> {
    if depth == 0 {
        return Err(Error::InvalidParameter("depth must be at least 1".into()));
    }
    cfg.validate()?;
    let mut halves = split_dataset(available, &SplitSpec::new(vec![0.5, 0.5], seed)?)?;
    let holdout = halves.pop().expect("two parts");
    let mut stage_set = halves.pop().expect("two parts");
    if stage_set.is_empty() || holdout.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "{} demands are too few to build a cascade",
            available.len()
        )));
    }

    let mut models = Vec::with_capacity(depth);
    let mut stage_training_ids = Vec::with_capacity(depth);
    let mut truncation = None;
    loop {
        let k = models.len();
        let model = scorer::train(&stage_set, &cfg.with_init_seed(cfg.init_seed.wrapping_add(k as u64)))?;
        stage_training_ids.push(stage_set.ids());
        models.push(model);
        if models.len() == depth {
            break;
        }
        let next = partition_by_confidence(&models[k], &stage_set, range)?.difficult;
        let reason = if next.is_empty() {
            Some(TruncationReason::EmptyDifficultSet)
        } else if !next.has_both_classes() {
            Some(TruncationReason::SingleClassDifficultSet)
        } else {
            None
        };
        if let Some(reason) = reason {
            truncation = Some(Truncation { stage: k + 1, reason });
            break;
        }
        stage_set = next;
    }

    Ok(CascadeBuild {
        ensemble: CascadeEnsemble::new(models, range, DEFAULT_THRESHOLD)?,
        holdout,
        info: BuildInfo {
            requested_depth: depth,
            stage_training_ids,
            truncation,
        },
    })
}

/// Per deciding model: how many demands it decided and how many of those
/// it got right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShare {
    pub count: usize,
    pub correct: usize,
    /// `None` when the model decided nothing.
    pub conditional_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// Clean demands labelled attack, over n.
    pub fp_rate: f64,
    /// Attack demands labelled clean, over n.
    pub fn_rate: f64,
    pub per_model: Vec<ModelShare>,
    /// Model 0 on its own, thresholded at the tie threshold.
    pub model0_accuracy: f64,
}

impl CascadeMetrics {
    /// `sum_k count_k / n * conditional_accuracy_k`.
    pub fn decomposed_accuracy(&self) -> f64 {
        self.per_model
            .iter()
            .filter_map(|m| m.conditional_accuracy.map(|a| m.count as f64 / self.n as f64 * a))
            .sum()
    }
}

pub fn evaluate_cascade(e: &CascadeEnsemble, ds: &LabeledDataset) -> Result<CascadeMetrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut shares = vec![(0usize, 0usize); e.depth()];
    let (mut correct, mut fp, mut fneg, mut model0_correct) = (0usize, 0usize, 0usize, 0usize);
    for (d, truth) in ds.iter() {
        let dec = cascade_predict(e, d)?;
        let share = &mut shares[dec.deciding_model];
        share.0 += 1;
        if dec.label == truth {
            correct += 1;
            share.1 += 1;
        } else if truth == Label::Clean {
            fp += 1;
        } else {
            fneg += 1;
        }
        if e.models[0].classify(d, e.final_tie_threshold)? == truth {
            model0_correct += 1;
        }
    }
    let n = ds.len() as f64;
    Ok(CascadeMetrics {
        n: ds.len(),
        accuracy: correct as f64 / n,
        fp_rate: fp as f64 / n,
        fn_rate: fneg as f64 / n,
        per_model: shares
            .into_iter()
            .map(|(count, correct)| ModelShare {
                count,
                correct,
                conditional_accuracy: (count > 0).then(|| correct as f64 / count as f64),
            })
            .collect(),
        model0_accuracy: model0_correct as f64 / n,
    })
}
