//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channels::{ChannelSpec, PairPolicy};
use crate::data::{LabeledDataset, ScoreRange, SplitSpec};
use crate::diversity::ProfileSpec;
use crate::error::{Error, Result};
use crate::harness::csv_io::load_csv;
use crate::harness::generate::{gen_data, GeneratorSpec};
use crate::regression::RetrainMode;
use crate::scorer::{TrainConfig, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub trials: usize,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Cascade(CascadeExperiment),
    Retraining(RetrainingExperiment),
    Diversity(DiversityExperiment),
    Channels(ChannelsExperiment),
    Router(RouterExperiment),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Cascade(_) => "cascade",
            Experiment::Retraining(_) => "retraining",
            Experiment::Diversity(_) => "diversity",
            Experiment::Channels(_) => "channels",
            Experiment::Router(_) => "router",
        }
    }
}

/// Where an experiment's demands come from. A generator's own `seed` is
/// replaced by a per-trial seed when an experiment runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Generate(GeneratorSpec),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeExperiment {
    pub dataset: DatasetSource,
    pub depth: usize,
    pub range: ScoreRange,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainingExperiment {
    pub dataset: DatasetSource,
    /// Initial-training, new-data and test fractions.
    #[serde(default = "default_split")]
    pub split: Vec<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub mode: RetrainMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversityExperiment {
    pub profile: ProfileSpec,
    /// Each scale multiplies the whole profile and yields one curve point.
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    pub n_versions: usize,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSetup {
    pub a: ChannelSpec,
    pub b: ChannelSpec,
    pub policy: PairPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerSetup {
    pub trusted: ChannelSpec,
    pub checker: ChannelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsExperiment {
    pub n_demands: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker: Option<CheckerSetup>,
}

/// Demands of route 0 and route 1 come from separate generators; route 1
/// ids are shifted past route 0's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterExperiment {
    pub routes: [GeneratorSpec; 2],
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_split() -> Vec<f64> {
    vec![0.4, 0.4, 0.2]
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_scales() -> Vec<f64> {
    vec![1.0]
}

/// A dataset source after validation: generators are checked, CSV files
/// are loaded.
#[derive(Debug, Clone)]
pub enum ResolvedSource {
    Generate(GeneratorSpec),
    Loaded(LabeledDataset),
}

impl ResolvedSource {
    /// The trial's dataset; `seed` only affects generated data.
    pub fn dataset(&self, seed: u64) -> Result<LabeledDataset> {
        match self {
            ResolvedSource::Generate(g) => gen_data(&g.with_seed(seed)),
            ResolvedSource::Loaded(ds) => Ok(ds.clone()),
        }
    }
}

/// Inputs that cannot be read are reported as invalid configuration.
fn unreadable(e: Error) -> Error {
    match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        other => other,
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(invalid(format!("threshold {t} outside [0, 1]")))
    }
}

impl DatasetSource {
    /// Makes a relative CSV path absolute against `base`.
    fn resolve_path(&mut self, base: &Path) {
        if let DatasetSource::Csv(p) = self {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn load(&self) -> Result<ResolvedSource> {
        match self {
            DatasetSource::Generate(g) => {
                g.validate()?;
                Ok(ResolvedSource::Generate(g.clone()))
            }
            DatasetSource::Csv(p) => Ok(ResolvedSource::Loaded(load_csv(p).map_err(unreadable)?)),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(Error::io(path, e)))?;
        let mut cfg = Self::from_json(&text)?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    /// Resolves relative dataset paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        match &mut self.experiment {
            Experiment::Cascade(c) => c.dataset.resolve_path(base),
            Experiment::Retraining(r) => r.dataset.resolve_path(base),
            _ => {}
        }
    }

    /// Checks every parameter and loads any CSV input.
    pub fn validate(&self) -> Result<Option<ResolvedSource>> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        match &self.experiment {
            Experiment::Cascade(c) => {
                if c.depth == 0 {
                    return Err(invalid("depth must be at least 1"));
                }
                c.train.validate()?;
                let src = c.dataset.load()?;
                if let ResolvedSource::Loaded(ds) = &src {
                    if ds.len() < 2 {
                        return Err(invalid(format!("{} demands are too few for a cascade", ds.len())));
                    }
                }
                Ok(Some(src))
            }
            Experiment::Retraining(r) => {
                let spec = SplitSpec::new(r.split.clone(), 0)?;
                if spec.fractions().len() != 3 {
                    return Err(invalid(format!("split needs three fractions, got {}", r.split.len())));
                }
                r.train.validate()?;
                check_threshold(r.threshold)?;
                let src = r.dataset.load()?;
                if let ResolvedSource::Loaded(ds) = &src {
                    if spec.part_sizes(ds.len()).contains(&0) {
                        return Err(invalid(format!("{} demands leave a split part empty", ds.len())));
                    }
                }
                Ok(Some(src))
            }
            Experiment::Diversity(d) => {
                let profile = d.profile.build()?;
                if d.scales.is_empty() {
                    return Err(invalid("scales must not be empty"));
                }
                for &s in &d.scales {
                    profile.scaled(s)?;
                }
                if d.n_versions < 2 {
                    return Err(invalid("n_versions must be at least 2"));
                }
                let available = d.n_versions * (d.n_versions - 1) / 2;
                if d.n_pairs == 0 || d.n_pairs > available {
                    return Err(invalid(format!("n_pairs must be in 1..={available}")));
                }
                Ok(None)
            }
            Experiment::Channels(c) => {
                if c.n_demands == 0 {
                    return Err(invalid("n_demands must be at least 1"));
                }
                if c.pair.is_none() && c.checker.is_none() {
                    return Err(invalid("channels experiment needs a pair or a checker setup"));
                }
                if let Some(p) = &c.pair {
                    p.a.validate()?;
                    p.b.validate()?;
                }
                if let Some(k) = &c.checker {
                    k.trusted.validate()?;
                    k.checker.validate()?;
                }
                Ok(None)
            }
            Experiment::Router(r) => {
                for g in &r.routes {
                    g.validate()?;
                }
                if r.routes[0].dim != r.routes[1].dim {
                    return Err(invalid("route generators must share dim"));
                }
                r.train.validate()?;
                check_threshold(r.threshold)?;
                Ok(None)
            }
        }
    }
}

pub const SHIPPED_KINDS: [&str; 5] = ["retraining", "cascade", "diversity", "channels", "router"];

/// Built-in configs as `(name, json)`.
pub fn shipped_configs() -> [(&'static str, &'static str); 5] {
    [
        ("retraining", include_str!("../../configs/retraining.json")),
        ("cascade", include_str!("../../configs/cascade.json")),
        ("fig2-profile", include_str!("../../configs/fig2-profile.json")),
        ("channels", include_str!("../../configs/channels.json")),
        ("router", include_str!("../../configs/router.json")),
    ]
}

/// The built-in config named `name`.
pub fn shipped_config(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = shipped_configs()
        .into_iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| invalid(format!("no built-in config named {name:?}")))?;
    ExperimentConfig::from_json(text)
}
