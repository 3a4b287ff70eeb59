//! Run configuration: one strict JSON document that pins every knob of a
//! run. Unknown keys are rejected rather than ignored — a silently dropped
//! setting would invalidate any reproducibility claim downstream.
//!
//! Every section has defaults, so `{}` is a complete valid configuration
//! and partial files override only what they mention.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dataset::{MixtureSpec, ShapeSpec, SHAPE_CLASSES, SHAPE_DIM};
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::inversion::PtiConfig;
use crate::schedule::{ddim_timesteps, make_linear_schedule, DdimSteps, NoiseSchedule};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every consumer derives its own stream from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub ddim: DdimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pti: PtiConfig,
    pub edit: EditSection,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 17,
            dataset: DatasetConfig::default(),
            schedule: ScheduleConfig::default(),
            ddim: DdimConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pti: PtiConfig::default(),
            edit: EditSection::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Which synthetic dataset to train on. JSON is externally tagged:
/// `{"mixture": {...}}` or `{"shapes": {...}}`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mixture(MixtureSection),
    Shapes(ShapesSection),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Mixture(MixtureSection::default())
    }
}

impl DatasetConfig {
    pub fn n_train(&self) -> usize {
        match self {
            DatasetConfig::Mixture(m) => m.n_train,
            DatasetConfig::Shapes(s) => s.n_train,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            DatasetConfig::Mixture(m) => m.classes,
            DatasetConfig::Shapes(_) => SHAPE_CLASSES.len(),
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            DatasetConfig::Mixture(m) => m.dim,
            DatasetConfig::Shapes(_) => SHAPE_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSection {
    pub classes: usize,
    pub dim: usize,
    pub sigma: f64,
    pub n_train: usize,
}

impl Default for MixtureSection {
    fn default() -> Self {
        MixtureSection {
            classes: 4,
            dim: 2,
            sigma: 0.15,
            n_train: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapesSection {
    pub jitter: i64,
    pub n_train: usize,
}

impl Default for ShapesSection {
    fn default() -> Self {
        ShapesSection {
            jitter: 1,
            n_train: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t_train: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdimConfig {
    /// Subsequence length S.
    pub steps: usize,
    /// Encoding ratio r: fraction of the subsequence traversed by inversion.
    pub encode_ratio: f64,
}

impl Default for DdimConfig {
    fn default() -> Self {
        DdimConfig {
            steps: 50,
            encode_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub cond_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            cond_dim: 64,
        }
    }
}

/// Editing knobs. The guidance scale and descent settings come from the
/// top-level `pti` section so the tuned reconstruction and the edit always
/// share one configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditSection {
    pub eta: f64,
    pub target_class: usize,
    /// Class the edit test inputs are drawn from.
    pub source_class: usize,
}

impl Default for EditSection {
    fn default() -> Self {
        EditSection {
            eta: 0.9,
            target_class: 1,
            source_class: 0,
        }
    }
}

/// Ground-truth data distribution assembled from the dataset section.
#[derive(Debug, Clone)]
pub enum DataSpec {
    Mixture(MixtureSpec),
    Shapes(ShapeSpec),
}

impl RunConfig {
    /// Parse from JSON text and validate.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Check every cross-field constraint by actually constructing the
    /// derived objects each section describes.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.n_train() == 0 {
            return Err(Error::Config("config: n_train must be >= 1".into()));
        }
        self.data_spec()?;
        self.noise_schedule()?;
        self.ddim_steps()?;
        self.denoiser_config().validate()?;
        self.train.validate()?;
        self.pti.validate()?;
        if !(self.edit.eta >= 0.0 && self.edit.eta <= 1.0) {
            return Err(Error::Config(format!(
                "config: edit.eta must lie in [0, 1], got {}",
                self.edit.eta
            )));
        }
        let k = self.dataset.n_classes();
        if self.edit.target_class >= k || self.edit.source_class >= k {
            return Err(Error::Config(format!(
                "config: edit classes must be < {k} (target {}, source {})",
                self.edit.target_class, self.edit.source_class
            )));
        }
        if self.edit.target_class == self.edit.source_class {
            return Err(Error::Config(
                "config: edit.target_class must differ from edit.source_class".into(),
            ));
        }
        Ok(())
    }

    pub fn data_spec(&self) -> Result<DataSpec> {
        match &self.dataset {
            DatasetConfig::Mixture(m) => Ok(DataSpec::Mixture(MixtureSpec::on_unit_circle(
                m.classes, m.dim, m.sigma,
            )?)),
            DatasetConfig::Shapes(s) => Ok(DataSpec::Shapes(ShapeSpec::new(s.jitter)?)),
        }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        make_linear_schedule(
            self.schedule.t_train,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )
    }

    pub fn ddim_steps(&self) -> Result<DdimSteps> {
        ddim_timesteps(
            self.schedule.t_train,
            self.ddim.steps,
            self.ddim.encode_ratio,
        )
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            data_dim: self.dataset.data_dim(),
            cond_dim: self.model.cond_dim,
            hidden: self.model.hidden,
            n_classes: self.dataset.n_classes(),
            t_train: self.schedule.t_train,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding;
    /// stamped into every report so outputs can be traced to their exact
    /// configuration. The output directory is excluded: it fingerprints the
    /// data-generating parameters, and two runs that differ only in where
    /// their reports land must produce identical report bytes.
    pub fn config_hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = PathBuf::new();
        let canonical = serde_json::to_string(&semantic).expect("config always serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_config() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.seed, 17);
        assert_eq!(cfg.ddim.steps, 50);
        assert_eq!(cfg.ddim.encode_ratio, 0.8);
        assert_eq!(cfg.pti.omega, 7.5);
        assert_eq!(cfg.pti.beta, 0.1);
        assert_eq!(cfg.pti.n_iters, 1);
        assert_eq!(cfg.edit.eta, 0.9);
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 5, "ddim": {"steps": 10}}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.ddim.steps, 10);
        assert_eq!(cfg.ddim.encode_ratio, 0.8);
        assert_eq!(cfg.train.steps, 20_000);
    }

    #[test]
    fn json_roundtrip_preserves_everything() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.dataset = DatasetConfig::Shapes(ShapesSection {
            jitter: 2,
            n_train: 512,
        });
        cfg.pti.beta = 0.05;
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(RunConfig::from_json(r#"{"sede": 5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"steps": 10, "warmup": 5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": {"mixture": {"sigm": 0.2}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": {"gaussians": {}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"edit": {"strength": 0.5}}"#).is_err());
    }

    #[test]
    fn semantic_validation_catches_bad_values() {
        assert!(RunConfig::from_json(r#"{"train": {"steps": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"pti": {"n_iters": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"edit": {"eta": 1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"edit": {"target_class": 7}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"edit": {"target_class": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": {"mixture": {"n_train": 0}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": {"shapes": {"jitter": 5}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"ddim": {"encode_ratio": 1.5}}"#).is_err());
        assert!(
            RunConfig::from_json(r#"{"schedule": {"beta_start": 0.5, "beta_end": 0.2}}"#).is_err()
        );
    }

    #[test]
    fn parse_errors_are_config_errors() {
        let err = RunConfig::from_json("not json").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = RunConfig::from_json(r#"{"edit": {"eta": 2.0}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
        assert!(a.config_hash().chars().all(|c| c.is_ascii_hexdigit()));
        b.seed = 18;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn config_hash_ignores_output_location() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn derived_objects_match_sections() {
        let cfg = RunConfig::default();
        let sched = cfg.noise_schedule().unwrap();
        assert_eq!(sched.t_train(), 1000);
        let steps = cfg.ddim_steps().unwrap();
        assert_eq!(steps.n_steps(), 50);
        assert_eq!(steps.start_index(), 40);
        let dn = cfg.denoiser_config();
        assert_eq!(dn.data_dim, 2);
        assert_eq!(dn.n_classes, 4);
        assert_eq!(dn.hidden, 128);
        match cfg.data_spec().unwrap() {
            DataSpec::Mixture(m) => {
                assert_eq!(m.n_classes(), 4);
                assert_eq!(m.dim(), 2);
            }
            DataSpec::Shapes(_) => panic!("default dataset is the mixture"),
        }
    }
}
