//! Versioned JSON checkpoints written after every task.
//!
//! A checkpoint is a single JSON object:
//!
//! ```text
//! { "format": "gainlora-checkpoint", "version": 1, "seed": u64,
//!   "experiment": <experiment config>, "strategy": <strategy config>,
//!   "state": <continual state> }
//! ```
//!
//! Every matrix inside `state` is `{"rows": r, "cols": c, "f64le": s}` where
//! `s` is the standard base64 encoding of the `r·c` entries in row-major
//! order, each as 8 little-endian IEEE-754 binary64 bytes. Decoding is
//! bit-exact, so a resumed run continues exactly where it stopped.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::continual::{ContinualState, StrategyConfig};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gainlora-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub experiment: ExperimentConfig,
    pub strategy: StrategyConfig,
    pub state: ContinualState,
}

impl Checkpoint {
    pub fn new(experiment: &ExperimentConfig, strategy: &StrategyConfig, state: &ContinualState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: strategy.seed,
            experiment: experiment.clone(),
            strategy: strategy.clone(),
            state: state.clone(),
        }
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        match (
            value.get("format").and_then(|f| f.as_str()),
            value.get("version").and_then(|v| v.as_u64()),
        ) {
            (Some(CHECKPOINT_FORMAT), Some(v)) if v == u64::from(CHECKPOINT_VERSION) => {}
            (Some(CHECKPOINT_FORMAT), v) => {
                return Err(Error::Checkpoint(format!(
                    "{}: unsupported version {v:?}",
                    path.display()
                )))
            }
            _ => return Err(Error::Checkpoint(format!("{}: not a checkpoint", path.display()))),
        }
        let ckpt: Self = serde_json::from_value(value)?;
        ckpt.state.matrix.validate()?;
        Ok(ckpt)
    }
}
