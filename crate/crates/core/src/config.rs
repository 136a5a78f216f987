//! The JSON configuration file read by the command-line tool.
//!
//! Every section and key is optional; missing keys take their defaults and
//! unknown keys are rejected. Example:
//!
//! ```json
//! {
//!   "model": { "levels": 3, "enc_channels": [16, 32, 32, 64, 64],
//!              "dec_channels": [64, 64, 64, 32, 16], "leaky_slope": 0.2,
//!              "head_init_scale": 1e-5,
//!              "loss": { "sigma": 1.0, "lambda": 1e-4, "ncc_window": 9,
//!                        "ncc_mode": "squared" } },
//!   "train": { "lr": 1e-4, "batch_size": 1, "iterations": 2000, "seed": 0,
//!              "sigma": 1.0, "lambda": 1e-4, "levels": 3,
//!              "val_interval": 100, "val_pairs": 10,
//!              "checkpoint_interval": 500 },
//!   "data": { "seed": 0, "count": 30, "shape": [48, 48, 48], "n_blobs": 150,
//!             "sigma_min": 0.03, "sigma_max": 0.06, "center_min": 0.05,
//!             "center_max": 0.95, "field_sigma": 14.0, "max_disp": 2.0,
//!             "extra_blobs": 0 },
//!   "split": { "train": 20, "val": 4 },
//!   "eval": { "dice": "mean", "network_only": false, "pairs": 20 },
//!   "ablation": { "levels": [1, 2, 3, 4, 5], "lambdas": [0.0, 1e-4] }
//! }
//! ```
//!
//! `train.levels`, `train.sigma` and `train.lambda` override the matching
//! model settings when training. Single values can be overridden on the
//! command line with `--set section.key=value`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DiceMode;
use crate::model::ModelConfig;
use crate::training::TrainConfig;
use crate::volumes::DatasetSpec;

/// How a dataset's subjects are divided, in file order: the first `train`
/// for training, the next `val` for validation, the rest for testing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Split {
    pub train: usize,
    pub val: usize,
}

impl Default for Split {
    fn default() -> Self {
        Split { train: 20, val: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub dice: DiceMode,
    /// Exclude pyramid construction from the timed region.
    pub network_only: bool,
    /// Number of seeded test pairs.
    pub pairs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            dice: DiceMode::Mean,
            network_only: false,
            pairs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub levels: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            levels: vec![1, 2, 3, 4, 5],
            lambdas: vec![0.0, 1e-4],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetSpec,
    pub split: Split,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `section.key=value` overrides in order. Values are parsed as
    /// JSON, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut root = serde_json::to_value(&self).expect("config serialises");
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
            let mut node = &mut root;
            for key in path.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|m| m.get_mut(key))
                    .ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?;
            }
            *node = value;
        }
        serde_json::from_value(root).map_err(|e| Error::Config(format!("override: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// The model configuration training actually uses.
    pub fn effective_model(&self) -> ModelConfig {
        self.train.model_config(&self.model)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.effective_model().validate()?;
        if self.split.train < 2 {
            return Err(Error::Config("split.train must be ≥ 2".into()));
        }
        if self.eval.pairs < 1 {
            return Err(Error::Config("eval.pairs must be ≥ 1".into()));
        }
        Ok(())
    }
}
