//! Experiment configuration, read from and written to JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackKind, AttackSpec};
use crate::dataio::{SeriesFormat, SplitFractions, VarianceLevel};
use crate::detect::BudgetSplit;
use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::model::{InferenceMode, ModelConfig, TrainConfig};

/// Where the meter series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated series; `users > 1` concatenates that many single-attribute
    /// (energy) users column-wise.
    Synth {
        days: usize,
        interval_minutes: u32,
        level: VarianceLevel,
        #[serde(default = "one")]
        users: usize,
    },
    File { path: PathBuf, format: SeriesFormat },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    /// Attributes kept for modelling; all when absent.
    #[serde(default)]
    pub attributes: Option<Vec<String>>,
    /// Attributes the adversary manipulates; energy and current when absent.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub context_len: usize,
    pub horizon_len: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            context_len: 24,
            horizon_len: 24,
            train_stride: 48,
            eval_stride: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub alpha: f64,
    pub split: BudgetSplit,
    pub mode: InferenceMode,
    /// Windows per inference batch.
    pub batch_size: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            split: BudgetSplit::HalfHalf,
            mode: InferenceMode::Full,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    AlphaTpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub windows: WindowConfig,
    /// `attributes`, `context_len` and `horizon_len` are filled from the data.
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "all_attacks")]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<Metric>,
    /// Emit SVG plots next to the report.
    #[serde(default)]
    pub plots: bool,
}

fn all_attacks() -> Vec<AttackSpec> {
    AttackKind::ALL.iter().map(|&k| AttackSpec::new(k, 0)).collect()
}

fn all_metrics() -> Vec<Metric> {
    vec![Metric::Auc, Metric::AlphaTpr]
}

impl ExperimentConfig {
    /// A synthetic-data experiment with library defaults.
    pub fn synth(days: usize, interval_minutes: u32, level: VarianceLevel) -> Self {
        Self {
            seed: 0,
            data: DataConfig {
                source: DataSource::Synth {
                    days,
                    interval_minutes,
                    level,
                    users: 1,
                },
                attributes: None,
                targets: None,
            },
            split: SplitFractions::default(),
            windows: WindowConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            schedule: ScheduleSpec::default(),
            attacks: all_attacks(),
            detection: DetectionConfig::default(),
            metrics: all_metrics(),
            plots: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        let w = &self.windows;
        if w.context_len == 0 || w.horizon_len == 0 || w.train_stride == 0 || w.eval_stride == 0 {
            return Err(Error::Config("window lengths and strides must be positive".into()));
        }
        if self.attacks.is_empty() {
            return Err(Error::Config("at least one attack is required".into()));
        }
        for a in &self.attacks {
            a.validate()?;
        }
        if self.detection.batch_size == 0 {
            return Err(Error::Config("detection.batch_size must be positive".into()));
        }
        self.detection.split.budgets(self.detection.alpha)?;
        self.train.validate()?;
        if let DataSource::Synth { users: 0, .. } = self.data.source {
            return Err(Error::Config("data.source.synth.users must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}
