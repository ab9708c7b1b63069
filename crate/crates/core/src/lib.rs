//! Classifier ensembles and redundant channels as a reliability problem:
//! logistic scorers, confidence cascades, retraining regression diffs,
//! failure-diversity models, channel simulations and an experiment harness.

pub mod cascade;
pub mod channels;
pub mod data;
pub mod diversity;
pub mod error;
pub mod harness;
pub mod regression;
pub mod rng;
pub mod scorer;

pub use data::{Demand, Label, LabeledDataset, ScoreRange, SplitSpec};
pub use error::{Error, Result};
pub use scorer::{ScorerParams, TrainConfig};
