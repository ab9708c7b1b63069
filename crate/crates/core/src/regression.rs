//! Regression faults: items a model got right before retraining and gets
//! wrong afterwards.
//!
//! Rates follow one fixed orientation. An attack (label 0) is the positive
//! detection target, so a false positive is a clean item flagged as attack
//! and a false negative is an attack passed as clean. Both are normalised
//! by the test-set size `n`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, Label, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::scorer::{self, label_at, ScorerParams, TrainConfig};

pub const RATE_CONVENTION: &str =
    "positive class = attack (label 0); fp = clean predicted attack; fn = attack predicted clean; rates over n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub demand_id: u64,
    pub score: f64,
    pub predicted_label: Label,
    pub true_label: Label,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted_label == self.true_label
    }
}

/// Scores and thresholds every demand of `ds`.
pub fn predict_records(p: &ScorerParams, ds: &LabeledDataset, threshold: f64) -> Result<Vec<PredictionRecord>> {
    let scores = p.score_all(ds)?;
    Ok(ds
        .iter()
        .zip(scores)
        .map(|((d, truth), score)| PredictionRecord {
            demand_id: d.id,
            score,
            predicted_label: label_at(score, threshold),
            true_label: truth,
        })
        .collect())
}

pub fn correctness_vector(preds: &[PredictionRecord]) -> Vec<bool> {
    preds.iter().map(PredictionRecord::is_correct).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub correct: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub rate_convention: String,
    pub n: usize,
    pub acc_before: f64,
    pub acc_after: f64,
    pub fp_before: f64,
    pub fn_before: f64,
    pub fp_after: f64,
    pub fn_after: f64,
    /// Correct before, incorrect after (the regression-fault count D).
    pub regressed: usize,
    /// Incorrect before, correct after.
    pub repaired: usize,
    pub regressed_ids: Vec<u64>,
    pub repaired_ids: Vec<u64>,
    pub before: ArmCounts,
    pub after: ArmCounts,
}

impl RegressionReport {
    /// `acc_after - acc_before == (repaired - regressed) / n`, checked on
    /// the integer counts.
    pub fn bookkeeping_holds(&self) -> bool {
        self.after.correct as i64 - self.before.correct as i64
            == self.repaired as i64 - self.regressed as i64
    }
}

fn arm_counts(preds: &[PredictionRecord]) -> ArmCounts {
    let mut c = ArmCounts {
        correct: 0,
        false_positives: 0,
        false_negatives: 0,
    };
    for p in preds {
        match (p.predicted_label, p.true_label) {
            (a, b) if a == b => c.correct += 1,
            (Label::Attack, Label::Clean) => c.false_positives += 1,
            _ => c.false_negatives += 1,
        }
    }
    c
}

/// Diffs two prediction arms over the same items. Arms are aligned by
/// `demand_id`; list order does not matter. The report lists ids in the
/// order of `before`.
pub fn regression_diff(before: &[PredictionRecord], after: &[PredictionRecord]) -> Result<RegressionReport> {
    if before.len() != after.len() {
        return Err(Error::GroundTruthMismatch(format!(
            "{} items before, {} after",
            before.len(),
            after.len()
        )));
    }
    if before.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let by_id: HashMap<u64, &PredictionRecord> = after.iter().map(|r| (r.demand_id, r)).collect();
    if by_id.len() != after.len() {
        return Err(Error::GroundTruthMismatch("duplicate demand ids in the after arm".into()));
    }

    let mut regressed_ids = Vec::new();
    let mut repaired_ids = Vec::new();
    let mut seen = std::collections::HashSet::with_capacity(before.len());
    for b in before {
        if !seen.insert(b.demand_id) {
            return Err(Error::GroundTruthMismatch(format!("duplicate demand id {}", b.demand_id)));
        }
        let a = by_id.get(&b.demand_id).ok_or_else(|| {
            Error::GroundTruthMismatch(format!("demand {} missing from the after arm", b.demand_id))
        })?;
        if a.true_label != b.true_label {
            return Err(Error::GroundTruthMismatch(format!(
                "demand {} labelled {} before and {} after",
                b.demand_id, b.true_label, a.true_label
            )));
        }
        match (b.is_correct(), a.is_correct()) {
            (true, false) => regressed_ids.push(b.demand_id),
            (false, true) => repaired_ids.push(b.demand_id),
            _ => {}
        }
    }

    let n = before.len();
    let nf = n as f64;
    let (bc, ac) = (arm_counts(before), arm_counts(after));
    Ok(RegressionReport {
        rate_convention: RATE_CONVENTION.to_string(),
        n,
        acc_before: bc.correct as f64 / nf,
        acc_after: ac.correct as f64 / nf,
        fp_before: bc.false_positives as f64 / nf,
        fn_before: bc.false_negatives as f64 / nf,
        fp_after: ac.false_positives as f64 / nf,
        fn_after: ac.false_negatives as f64 / nf,
        regressed: regressed_ids.len(),
        repaired: repaired_ids.len(),
        regressed_ids,
        repaired_ids,
        before: bc,
        after: ac,
    })
}

/// Records sorted by ascending score, ties by demand id.
pub fn sorted_by_score(preds: &[PredictionRecord]) -> Vec<PredictionRecord> {
    let mut sorted = preds.to_vec();
    sorted.sort_by(|x, y| x.score.total_cmp(&y.score).then(x.demand_id.cmp(&y.demand_id)));
    sorted
}

/// `(rank, score)` pairs in ascending score order, ranked from 0.
pub fn ordered_scores(preds: &[PredictionRecord]) -> Vec<(usize, f64)> {
    sorted_by_score(preds)
        .into_iter()
        .enumerate()
        .map(|(i, p)| (i, p.score))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainMode {
    /// Continue from the part-1 model.
    #[default]
    WarmStart,
    /// Train a new model on part 1 + part 2 from scratch.
    Fresh,
}

#[derive(Debug, Clone)]
pub struct RetrainingOutcome {
    pub report: RegressionReport,
    pub before: Vec<PredictionRecord>,
    pub after: Vec<PredictionRecord>,
}

/// Train on part 1, evaluate on part 3, retrain on part 1 + part 2,
/// evaluate on part 3 again, diff.
pub fn retraining_experiment(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    spec: &SplitSpec,
    threshold: f64,
    mode: RetrainMode,
) -> Result<RetrainingOutcome> {
    if spec.fractions().len() != 3 {
        return Err(Error::InvalidSplit(format!(
            "retraining needs three parts, got {}",
            spec.fractions().len()
        )));
    }
    let parts = split_dataset(ds, spec)?;
    if let Some(i) = parts.iter().position(LabeledDataset::is_empty) {
        return Err(Error::InvalidDataset(format!(
            "{} demands leave part {} empty",
            ds.len(),
            i + 1
        )));
    }
    let initial = scorer::train(&parts[0], cfg)?;
    let before = predict_records(&initial, &parts[2], threshold)?;
    let combined = parts[0].concat(&parts[1])?;
    let retrained = match mode {
        RetrainMode::WarmStart => scorer::retrain(&initial, &combined, cfg)?,
        RetrainMode::Fresh => scorer::train(&combined, cfg)?,
    };
    let after = predict_records(&retrained, &parts[2], threshold)?;
    let report = regression_diff(&before, &after)?;
    Ok(RetrainingOutcome { report, before, after })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn rec(id: u64, score: f64, pred: u8, truth: u8) -> PredictionRecord {
        PredictionRecord {
            demand_id: id,
            score,
            predicted_label: Label::from_u8(pred).unwrap(),
            true_label: Label::from_u8(truth).unwrap(),
        }
    }

    /// Arm whose i-th item is correct iff `pattern[i]`; all truths are clean.
    fn arm(pattern: &[bool]) -> Vec<PredictionRecord> {
        pattern
            .iter()
            .enumerate()
            .map(|(i, &ok)| rec(i as u64, 0.5, u8::from(ok), 1))
            .collect()
    }

    #[test]
    fn correctness_examples() {
        assert_eq!(correctness_vector(&[rec(0, 0.9, 1, 1)]), vec![true]);
        assert_eq!(correctness_vector(&[rec(0, 0.1, 0, 1)]), vec![false]);
        let mixed = [rec(0, 0.9, 1, 1), rec(1, 0.9, 1, 0), rec(2, 0.1, 0, 0), rec(3, 0.1, 0, 1)];
        assert_eq!(correctness_vector(&mixed), vec![true, false, true, false]);
    }

    #[test]
    fn identical_arms_have_no_transitions() {
        let a = arm(&[true, false, true]);
        let r = regression_diff(&a, &a).unwrap();
        assert_eq!((r.regressed, r.repaired), (0, 0));
        assert_eq!(r.acc_before, r.acc_after);
    }

    #[test]
    fn one_regressed_one_repaired() {
        let r = regression_diff(&arm(&[true, true, false, false]), &arm(&[true, false, true, false])).unwrap();
        assert_eq!((r.regressed, r.repaired), (1, 1));
        assert_eq!(r.regressed_ids, vec![1]);
        assert_eq!(r.repaired_ids, vec![2]);
        assert_eq!(r.acc_after - r.acc_before, 0.0);
        assert!(r.bookkeeping_holds());
    }

    #[test]
    fn rate_orientation() {
        let before = [rec(0, 0.1, 0, 1), rec(1, 0.9, 1, 0), rec(2, 0.9, 1, 0), rec(3, 0.9, 1, 1)];
        let r = regression_diff(&before, &before).unwrap();
        assert_eq!(r.fp_before, 0.25);
        assert_eq!(r.fn_before, 0.5);
        assert_eq!(r.acc_before, 0.25);
    }

    #[test]
    fn alignment_is_by_id() {
        let before = arm(&[true, false, true]);
        let mut after = arm(&[true, true, false]);
        after.reverse();
        let r = regression_diff(&before, &after).unwrap();
        assert_eq!(r.regressed_ids, vec![2]);
        assert_eq!(r.repaired_ids, vec![1]);
    }

    #[test]
    fn misaligned_arms_are_rejected() {
        let before = arm(&[true, false]);
        let mut after = arm(&[true, false]);
        after[1].true_label = Label::Attack;
        let err = regression_diff(&before, &after).unwrap_err();
        assert!(err.to_string().starts_with("arms disagree on ground truth"));
        let mut after = arm(&[true, false]);
        after[1].demand_id = 7;
        assert!(regression_diff(&before, &after).is_err());
        assert!(regression_diff(&before, &arm(&[true])).is_err());
    }

    #[test]
    fn ordered_scores_examples() {
        let preds = [rec(0, 0.9, 1, 1), rec(1, 0.1, 0, 1), rec(2, 0.5, 0, 1)];
        assert_eq!(ordered_scores(&preds), vec![(0, 0.1), (1, 0.5), (2, 0.9)]);
        let ties = [rec(5, 0.3, 0, 1), rec(2, 0.3, 0, 1), rec(9, 0.1, 0, 1)];
        let ids: Vec<u64> = sorted_by_score(&ties).iter().map(|p| p.demand_id).collect();
        assert_eq!(ids, vec![9, 2, 5]);
        assert_eq!(ordered_scores(&ties), vec![(0, 0.1), (1, 0.3), (2, 0.3)]);
    }

    #[test]
    fn ordered_scores_sorts_a_permutation() {
        let mut r = rng::seeded(10);
        let preds: Vec<PredictionRecord> = (0..1000).map(|i| rec(i, r.random::<f64>(), 0, 0)).collect();
        let out = ordered_scores(&preds);
        let mut reference: Vec<f64> = preds.iter().map(|p| p.score).collect();
        reference.sort_by(f64::total_cmp);
        assert_eq!(out.iter().map(|x| x.1).collect::<Vec<_>>(), reference);
        assert!(out.iter().enumerate().all(|(i, x)| x.0 == i));
    }

    #[test]
    fn zero_effective_retraining_has_no_regressions() {
        let mut r = rng::seeded(11);
        let demands = (0..300u64)
            .map(|i| crate::data::Demand::new(i, vec![r.random_range(-2.0..2.0)]))
            .collect::<Vec<_>>();
        let labels = demands
            .iter()
            .map(|d| if d.features[0] + r.random_range(-0.5..0.5) > 0.0 { Label::Clean } else { Label::Attack })
            .collect();
        let ds = LabeledDataset::new(1, demands, labels).unwrap();
        let spec = SplitSpec::new(vec![0.4, 0.4, 0.2], 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-12,
            epochs: 1,
            ..TrainConfig::default()
        };
        let out = retraining_experiment(&ds, &cfg, &spec, 0.5, RetrainMode::WarmStart).unwrap();
        assert_eq!(out.report.regressed, 0);
        assert_eq!(out.report.n, 60);
        assert!(retraining_experiment(&ds, &cfg, &SplitSpec::new(vec![0.5, 0.5], 1).unwrap(), 0.5, RetrainMode::WarmStart).is_err());
    }

    fn brute_force(before: &[PredictionRecord], after: &[PredictionRecord]) -> (usize, usize) {
        let mut regressed = 0;
        let mut repaired = 0;
        for b in before {
            let a = after.iter().find(|a| a.demand_id == b.demand_id).unwrap();
            let was = b.predicted_label == b.true_label;
            let now = a.predicted_label == a.true_label;
            if was && !now {
                regressed += 1;
            }
            if !was && now {
                repaired += 1;
            }
        }
        (regressed, repaired)
    }

    fn arm_strategy() -> impl Strategy<Value = (Vec<PredictionRecord>, Vec<PredictionRecord>)> {
        proptest::collection::vec((0u8..2, 0u8..2, 0u8..2, 0.0f64..1.0), 1..200).prop_map(|items| {
            let before = items.iter().enumerate().map(|(i, &(t, p, _, s))| rec(i as u64, s, p, t)).collect();
            let after = items.iter().enumerate().rev().map(|(i, &(t, _, q, s))| rec(i as u64, s, q, t)).collect();
            (before, after)
        })
    }

    proptest! {
        #[test]
        fn diff_matches_brute_force((before, after) in arm_strategy()) {
            let r = regression_diff(&before, &after).unwrap();
            prop_assert_eq!((r.regressed, r.repaired), brute_force(&before, &after));
            prop_assert!(r.bookkeeping_holds());
            prop_assert!(r.regressed + r.repaired <= r.n);
            prop_assert!(r.regressed_ids.iter().all(|id| !r.repaired_ids.contains(id)));
            let swapped = regression_diff(&after, &before).unwrap();
            prop_assert_eq!((swapped.regressed, swapped.repaired), (r.repaired, r.regressed));
        }
    }
}
