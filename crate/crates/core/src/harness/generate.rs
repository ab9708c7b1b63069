//! Synthetic labelled data: two Gaussian class clusters, optionally with a
//! "hard region" where clusters of both labels share one centre.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Demand, Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub center: Vec<f64>,
    /// Per-axis standard deviation.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardRegion {
    pub center: Vec<f64>,
    pub spread: f64,
    /// Fraction of all demands drawn from the hard region.
    pub weight: f64,
    /// Fraction of hard-region demands labelled clean.
    pub clean_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    pub dim: usize,
    pub attack: Cluster,
    pub clean: Cluster,
    /// Fraction of non-hard-region demands labelled clean.
    #[serde(default = "half")]
    pub clean_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_region: Option<HardRegion>,
    #[serde(default)]
    pub seed: u64,
}

fn half() -> f64 {
    0.5
}

impl GeneratorSpec {
    /// Overlapping blobs at (0, 0) and (1, 1) with spread 0.5; the Bayes
    /// accuracy is `Phi(sqrt(2))`, about 0.921.
    pub fn two_blob(n: usize, seed: u64) -> Self {
        GeneratorSpec {
            n,
            dim: 2,
            attack: Cluster {
                center: vec![0.0, 0.0],
                spread: 0.5,
            },
            clean: Cluster {
                center: vec![1.0, 1.0],
                spread: 0.5,
            },
            clean_fraction: 0.5,
            hard_region: None,
            seed,
        }
    }

    /// Well separated blobs plus a mostly-attack hard region midway
    /// between them, holding 30% of the demands.
    pub fn hard_region(n: usize, seed: u64) -> Self {
        GeneratorSpec {
            n,
            dim: 2,
            attack: Cluster {
                center: vec![-1.5, -1.5],
                spread: 0.7,
            },
            clean: Cluster {
                center: vec![1.5, 1.5],
                spread: 0.7,
            },
            clean_fraction: 0.5,
            hard_region: Some(HardRegion {
                center: vec![0.0, 0.0],
                spread: 0.5,
                weight: 0.3,
                clean_fraction: 0.25,
            }),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GeneratorSpec { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(format!("generator: {msg}")));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.dim < 1 {
            return bad("dim must be at least 1".into());
        }
        let check_cluster = |name: &str, center: &[f64], spread: f64| {
            if center.len() != self.dim {
                return bad(format!("{name} centre has {} coordinates, expected {}", center.len(), self.dim));
            }
            if center.iter().any(|c| !c.is_finite()) {
                return bad(format!("{name} centre is not finite"));
            }
            if !(spread.is_finite() && spread > 0.0) {
                return bad(format!("{name} spread must be positive, got {spread}"));
            }
            Ok(())
        };
        check_cluster("attack", &self.attack.center, self.attack.spread)?;
        check_cluster("clean", &self.clean.center, self.clean.spread)?;
        if !(0.0..=1.0).contains(&self.clean_fraction) {
            return bad(format!("clean_fraction {} outside [0, 1]", self.clean_fraction));
        }
        if let Some(h) = &self.hard_region {
            check_cluster("hard region", &h.center, h.spread)?;
            if !(0.0..=1.0).contains(&h.weight) {
                return bad(format!("hard region weight {} outside [0, 1]", h.weight));
            }
            if !(h.clean_fraction > 0.0 && h.clean_fraction < 1.0) {
                return bad(format!(
                    "hard region clean_fraction {} must be strictly between 0 and 1",
                    h.clean_fraction
                ));
            }
        }
        Ok(())
    }
}

/// Samples `spec.n` demands with ids `0..n`.
pub fn gen_data(spec: &GeneratorSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut r = rng::seeded(spec.seed);
    let mut demands = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for id in 0..spec.n as u64 {
        let hard = spec.hard_region.as_ref().filter(|h| r.random_bool(h.weight));
        let (center, spread, label) = match hard {
            Some(h) => {
                let label = if r.random_bool(h.clean_fraction) { Label::Clean } else { Label::Attack };
                (&h.center, h.spread, label)
            }
            None if r.random_bool(spec.clean_fraction) => (&spec.clean.center, spec.clean.spread, Label::Clean),
            None => (&spec.attack.center, spec.attack.spread, Label::Attack),
        };
        let features = center
            .iter()
            .map(|c| c + spread * r.sample::<f64, _>(StandardNormal))
            .collect();
        demands.push(Demand::new(id, features));
        labels.push(label);
    }
    LabeledDataset::new(spec.dim, demands, labels)
}
