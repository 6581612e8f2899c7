//! Checkpoint files: everything needed to reload a trained model and resume
//! or audit a run — parameters, normalization statistics, the treatment
//! policy, optimizer state, loss history, and the seed bookkeeping that
//! makes reruns reproducible.

use super::{Model, TrainLog};
use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::treatment::TreatmentPolicy;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Identifies checkpoint files; anything else is rejected on load.
pub const CHECKPOINT_FORMAT: &str = "convqual-checkpoint";
/// Bumped on breaking layout changes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a run's randomness stood when the checkpoint was written. All
/// randomness derives from `seed` and the two counters, so this record *is*
/// the complete RNG state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: u64,
    /// Global batch counter (cursor into the projection-direction stream).
    pub batches: u64,
    pub epochs_run: usize,
}

/// A saved training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Model,
    /// The treatment policy the model was trained under (and should be
    /// evaluated with).
    pub policy: TreatmentPolicy,
    /// Weight of the representation-balance term during training.
    pub lambda: f64,
    /// Number of treatment arms (1 for the treatment-blind baselines).
    pub num_arms: usize,
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation MSE per epoch (empty when no split was held out).
    pub val_curve: Vec<f64>,
    pub optimizer: AdamState,
    pub rng: RngRecord,
}

impl Checkpoint {
    /// Bundles a freshly trained model with its run history.
    pub fn new(model: Model, policy: TreatmentPolicy, log: &TrainLog) -> Self {
        let cfg = model.config();
        let num_arms = match &model {
            Model::CfLstm(m) => m.num_arms(),
            _ => 1,
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            lambda: cfg.ipm_weight,
            num_arms,
            loss_curve: log.loss_curve.clone(),
            val_curve: log.val_curve.clone(),
            optimizer: log.optimizer.clone(),
            rng: RngRecord { seed: cfg.seed, batches: log.batches, epochs_run: log.epochs_run },
            model,
            policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "not a checkpoint file (format tag {:?})",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.model.validate()?;
        self.policy.validate()?;
        if let Model::CfLstm(m) = &self.model {
            if m.num_arms() != self.num_arms {
                return Err(Error::Checkpoint(format!(
                    "checkpoint declares {} arms but the model has {} heads",
                    self.num_arms,
                    m.num_arms()
                )));
            }
            if self.policy.num_arms() != self.num_arms {
                return Err(Error::Checkpoint(format!(
                    "policy defines {} arms but the model has {}",
                    self.policy.num_arms(),
                    self.num_arms
                )));
            }
        }
        Ok(())
    }
}

/// Writes `cp` to `path` as a single JSON document.
pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    cp.validate()?;
    let mut json = serde_json::to_string(cp)
        .map_err(|e| Error::Checkpoint(format!("serialization failed: {e}")))?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

/// Reads and validates a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let cp: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    cp.validate()?;
    Ok(cp)
}
