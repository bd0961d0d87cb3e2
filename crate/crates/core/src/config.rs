//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "synth": {"classes": 10, "dim": 16, "per_class_train": 200,
//!             "per_class_test": 50, "separation": 10.0, "seed": 7},
//!   "schedule": {"k": 4, "d": 1, "n_tasks": 7, "class_order_seed": null},
//!   "train": {"epochs_task0": 150, "epochs_incremental": 100,
//!             "batch_size": 32, "lr": 0.001, "seed": 0},
//!   "losses": {"R": 0.3, "gamma": 1.0, "enable_P": true, "enable_V": true,
//!              "enable_T": true, "enable_sharpening": true,
//!              "enable_batch_proto": true},
//!   "extractor": {"kind": "identity"},
//!   "output_dir": "runs/demo"
//! }
//! ```
//!
//! Exactly one of `dataset` (a path) and `synth` must be given. Unknown keys
//! anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{load_dataset, synth_gaussian, Dataset};
use crate::engine::{TaskSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::extractor::{ExtractorKind, ExtractorSpec};
use crate::losses::LossConfig;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "PGPFR_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    pub fn generate(&self) -> Result<Dataset> {
        synth_gaussian(
            self.classes,
            self.dim,
            self.per_class_train,
            self.per_class_test,
            self.separation,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub k: usize,
    pub d: usize,
    pub n_tasks: usize,
    /// Seeded class-to-task permutation; ascending label order when absent.
    #[serde(default)]
    pub class_order_seed: Option<u64>,
}

/// Extractor block; `input_dim` always comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    /// Defaults to the input dimension.
    #[serde(default)]
    pub feature_dim: Option<usize>,
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::Identity,
            feature_dim: None,
            hidden_dim: 0,
            seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn spec(&self, input_dim: usize) -> ExtractorSpec {
        ExtractorSpec {
            kind: self.kind,
            input_dim,
            feature_dim: self.feature_dim.unwrap_or(input_dim),
            hidden_dim: self.hidden_dim,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub losses: LossConfig,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write `checkpoint_task<i>.json` after every task.
    #[serde(default)]
    pub checkpoints: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("pgpfr-out")
}

impl ExperimentConfig {
    /// Parses and checks the document. Every problem here is an
    /// [`Error::Config`].
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match (&cfg.dataset, &cfg.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either `dataset` or `synth`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of `dataset` or `synth` is required".into(),
                ))
            }
            _ => {}
        }
        cfg.train_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The train block with the loss block folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.losses.clone(),
            ..self.train.clone()
        }
    }

    /// Loads or generates the dataset. Relative dataset paths resolve
    /// against `base`.
    pub fn dataset(&self, base: &Path) -> Result<Dataset> {
        match (&self.dataset, &self.synth) {
            (Some(path), _) => load_dataset(base.join(path)),
            (None, Some(synth)) => synth.generate(),
            (None, None) => Err(Error::Config("no dataset configured".into())),
        }
    }

    pub fn schedule_for(&self, ds: &Dataset) -> Result<TaskSchedule> {
        let s = &self.schedule;
        TaskSchedule::for_dataset(ds, s.k, s.d, s.n_tasks, s.class_order_seed)
    }

    /// `output_dir`, unless overridden by [`OUTPUT_DIR_ENV`].
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }
}
