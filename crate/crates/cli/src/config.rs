//! Experiment and calibration config files: a single JSON document each,
//! chosen for universal parsing and unambiguous canonicalization when
//! fingerprinting.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dbpa_core::embedder::EmbedderSpec;
use dbpa_core::inference::MetricId;
use dbpa_core::sampler::GeneratorSpec;
use dbpa_core::util;
use dbpa_core::{Error, Result};

/// How an input or the generator itself is transformed under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// Payload is prepended to the prompt, separated by one space.
    Prefix,
    /// Payload replaces the prompt wholesale.
    Rewrite,
    /// Prompt unchanged; the generator is swapped for the reference
    /// generator. A non-empty payload overrides the reference model id.
    ModelSwap,
}

/// One declared perturbation of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub id: String,
    pub kind: PerturbationKind,
    #[serde(default)]
    pub payload: String,
}

/// Multiple-testing adjustment across the declared perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MultipleTesting {
    Bh,
    Bonferroni,
    None,
}

fn default_k() -> usize {
    20
}

fn default_b() -> usize {
    1000
}

fn default_nbins() -> usize {
    50
}

fn default_metric() -> MetricId {
    MetricId::Jsd
}

fn default_alpha() -> f64 {
    0.05
}

fn default_multiple_testing() -> MultipleTesting {
    MultipleTesting::Bh
}

/// Declarative audit specification: what to sample, how to perturb it, and
/// which test to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub prompt: String,
    pub perturbations: Vec<Perturbation>,
    pub generator: GeneratorSpec,
    /// Required by model-swap perturbations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_generator: Option<GeneratorSpec>,
    pub embedder: EmbedderSpec,
    /// Draws per group. 20 gives 190 within-group and 400 cross-group
    /// pairs, enough to fill the default histogram.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Permutations per test; p-value resolution is 1/(b+1).
    #[serde(default = "default_b")]
    pub b: usize,
    #[serde(default = "default_nbins")]
    pub nbins: usize,
    #[serde(default = "default_metric")]
    pub metric: MetricId,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_multiple_testing")]
    pub multiple_testing: MultipleTesting,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Also dump each perturbation's similarity matrix as CSV.
    #[serde(default)]
    pub dump_similarity_matrix: bool,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("unparseable experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.perturbations.is_empty() {
            return Err(Error::Config("declare at least one perturbation".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &self.perturbations {
            if p.id.is_empty() {
                return Err(Error::Config("perturbation ids must be non-empty".into()));
            }
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate perturbation id {:?}",
                    p.id
                )));
            }
            if p.kind == PerturbationKind::ModelSwap && self.reference_generator.is_none() {
                return Err(Error::Config(format!(
                    "perturbation {:?} is a model swap but no reference_generator is configured",
                    p.id
                )));
            }
        }
        self.generator.validate()?;
        if let Some(reference) = &self.reference_generator {
            reference.validate()?;
        }
        self.embedder.validate()?;
        if self.k < 2 {
            return Err(Error::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if self.b < 1 {
            return Err(Error::Config(format!("b must be >= 1, got {}", self.b)));
        }
        if self.nbins < 2 {
            return Err(Error::Config(format!(
                "nbins must be >= 2, got {}",
                self.nbins
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Fingerprint over every field that affects results. The output
    /// directory is presentation-only and excluded, so moving an experiment
    /// does not change its identity.
    pub fn fingerprint(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        util::fingerprint(&canonical)
    }
}

fn default_theta_grid() -> Vec<f64> {
    vec![0.0, std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2]
}

fn default_trials() -> usize {
    200
}

fn default_calibration_b() -> usize {
    199
}

fn default_dim() -> usize {
    32
}

fn default_sigma() -> f64 {
    0.2
}

/// Configuration for the synthetic calibration laboratory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Shift angles to sweep, ascending from 0.
    #[serde(default = "default_theta_grid")]
    pub theta_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_calibration_b")]
    pub b: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_metric")]
    pub metric: MetricId,
    #[serde(default = "default_nbins")]
    pub nbins: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// When set, also run the permutation-vs-resampling comparison with
    /// this many draws per side and write `equivalence.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence_draws: Option<usize>,
}

impl CalibrationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("unparseable calibration config: {e}")))?;
        Ok(config)
    }
}
