//! Experiment configuration loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use shortcut_core::net::{Architecture, ConvergenceCriterion, Hyperparams, WeightInit};
use shortcut_core::phantom::PhantomSpec;
use shortcut_core::prep::ConfigId;
use shortcut_core::relevance::{LrpParams, TOP_FRACTION};
use shortcut_core::spray::SprayParams;
use shortcut_core::Dims;

use crate::error::{LabError, Result};

/// Input grid of the `--full-scale` preset.
pub const FULL_DIMS: Dims = Dims { nx: 160, ny: 240, nz: 256 };

/// Every random stream of an experiment derives from one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Phantom cohort generation.
    pub cohort: u64,
    /// Data samplings and weight initializations.
    pub sampling: u64,
    /// Bootstrap confidence intervals.
    pub bootstrap: u64,
    /// Spectral clustering and t-SNE.
    pub spray: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_base(0)
    }
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Self { cohort: seed, sampling: seed, bootstrap: seed, spray: seed }
    }
}

/// Output unit where relevance propagation starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceStart {
    /// Target logit minus the strongest rival logit.
    #[default]
    Margin,
    /// Target pre-softmax score.
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelevanceSettings {
    pub start: RelevanceStart,
    pub lrp: LrpParams,
    /// Share of total relevance kept by the display window and focus mask.
    pub top_fraction: f64,
    /// Distance in voxels from the brain-mask surface that counts as boundary.
    pub boundary_radius: f64,
}

impl Default for RelevanceSettings {
    fn default() -> Self {
        Self { start: RelevanceStart::Margin, lrp: LrpParams::default(), top_fraction: TOP_FRACTION, boundary_radius: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: PhantomSpec,
    pub n_subjects: usize,
    pub images_per_subject: usize,
    pub configs: Vec<ConfigId>,
    pub n_samplings: usize,
    pub n_inits: usize,
    pub hyperparams: Hyperparams,
    pub architecture: Architecture,
    pub convergence: ConvergenceCriterion,
    pub seeds: Seeds,
    /// Baseline for similarity and McNemar comparisons.
    pub reference: ConfigId,
    /// Family-wise error rate of the Holm procedures.
    pub alpha: f64,
    pub relevance: RelevanceSettings,
    pub spray: SprayParams,
    /// Minimum heatmap count for clustering a misclassification subset.
    pub min_subset: usize,
    /// Default output directory; `--out` takes precedence.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            n_subjects: 200,
            images_per_subject: 1,
            configs: ConfigId::ALL.to_vec(),
            n_samplings: 10,
            n_inits: 3,
            hyperparams: Hyperparams { learning_rate: 1e-3, init: WeightInit::He, ..Hyperparams::default() },
            architecture: Architecture::default(),
            convergence: ConvergenceCriterion::default(),
            seeds: Seeds::default(),
            reference: ConfigId::A2,
            alpha: 0.05,
            relevance: RelevanceSettings::default(),
            spray: SprayParams::default(),
            min_subset: 3,
            output: None,
        }
    }
}

fn bad(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switches to the full-resolution input grid, scaling the shell with it.
    pub fn full_scale(mut self) -> Self {
        let old = self.phantom.dims;
        let ratio = FULL_DIMS.nx.min(FULL_DIMS.ny).min(FULL_DIMS.nz) as f64 / old.nx.min(old.ny).min(old.nz) as f64;
        self.phantom.dims = FULL_DIMS;
        self.phantom.shell_thickness_vox *= ratio;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate().map_err(|e| bad(format!("phantom: {e}")))?;
        if self.configs.is_empty() {
            return Err(bad("no preprocessing configurations"));
        }
        let mut ids = self.configs.clone();
        ids.sort();
        ids.dedup();
        if ids.len() != self.configs.len() {
            return Err(bad("duplicate preprocessing configuration"));
        }
        if !self.configs.contains(&self.reference) {
            return Err(bad(format!("reference {} is not among the configurations", self.reference.as_str())));
        }
        if self.n_subjects == 0 || self.images_per_subject == 0 || self.n_samplings == 0 || self.n_inits == 0 {
            return Err(bad("subject, image, sampling and initialization counts must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        let hp = &self.hyperparams;
        if hp.epochs == 0 || hp.batch_size == 0 || !(hp.learning_rate > 0.0 && hp.learning_rate.is_finite()) {
            return Err(bad("epochs, batch size and learning rate must be positive"));
        }
        let a = &self.architecture;
        if a.blocks == 0 || a.channels == 0 || a.hidden_units == 0 || a.classes != 2 {
            return Err(bad("architecture needs positive sizes and exactly two classes"));
        }
        self.relevance.lrp.validate().map_err(|e| bad(format!("relevance: {e}")))?;
        let r = &self.relevance;
        if !(r.top_fraction > 0.0 && r.top_fraction <= 1.0) || !(r.boundary_radius >= 0.0) {
            return Err(bad("relevance window fraction must lie in (0, 1] and boundary radius be non-negative"));
        }
        if self.min_subset < 3 {
            return Err(bad("min_subset must be at least 3"));
        }
        Ok(())
    }

    /// Stable identifier of one training session.
    pub fn session_id(config: ConfigId, sampling: usize, init: usize) -> String {
        format!("{}_{sampling}_{init}", config.as_str())
    }
}
