//! The three rating predictors and their training machinery.
//!
//! - [`BaselineMlpModel`]: an MLP over fixed-size dialogue aggregates.
//! - [`BaselineLstmModel`]: an LSTM encoder with a single regression head.
//! - [`CfLstmModel`]: the counterfactual model — the same LSTM encoder shared
//!   by one regression head *per treatment arm*, trained with per-arm MSE
//!   plus a Wasserstein penalty that pushes the encoder representation Φ to
//!   be balanced across arms. Balance is what makes the off-arm head's
//!   output interpretable as a counterfactual rating estimate.
//!
//! All training is mini-batch Adam on a reverse-mode tape, deterministic
//! given (dataset, config, seed): fixed split/shuffle streams, fixed
//! reduction orders, no threads.

mod baselines;
mod cf_lstm;
mod checkpoint;
mod classify;
mod trainer;

pub use baselines::{
    baseline_lstm_loss, train_baseline_lstm, train_baseline_mlp, BaselineLstmModel, BaselineMlpModel,
};
pub use cf_lstm::{cf_lstm_loss, cf_lstm_loss_grads, extend_treatments, train_cf_lstm, CfLstmModel, RatedSeq};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngRecord};
pub use classify::{classify, Scheme};
pub use trainer::TrainLog;

use crate::data::{Dataset, Dialogue, NormStats, FEATURE_DIM};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Collapses per-turn hidden states by elementwise mean, mirroring
/// [`crate::nn::Tape::mean`]'s summation order exactly so plain and taped
/// forwards agree bitwise.
pub(crate) fn pool_mean(hidden: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = hidden[0].clone();
    for h in &hidden[1..] {
        for (a, &v) in acc.iter_mut().zip(h) {
            *a += v;
        }
    }
    let k = 1.0 / hidden.len() as f64;
    for a in &mut acc {
        *a *= k;
    }
    acc
}

/// Trainers fit their own normalization; feeding them pre-normalized data
/// would silently double-normalize.
pub(crate) fn check_raw(ds: &Dataset, what: &str) -> Result<()> {
    if ds.norm_stats.is_some() {
        return Err(Error::validation(format!(
            "{what} is already normalized; trainers expect raw features and fit their own statistics"
        )));
    }
    Ok(())
}

/// How the encoder's per-turn hidden states collapse to the dialogue
/// representation Φ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Φ = the final hidden state (default).
    Final,
    /// Φ = the mean of all hidden states.
    Mean,
}

/// Hyperparameters shared by all three trainers. Every field has a default,
/// so partial JSON configs deserialize cleanly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// LSTM hidden size H (also the first hidden width of the MLP baseline).
    pub hidden_dim: usize,
    /// Hidden widths of each regression head between Φ and the scalar output.
    pub head_layers: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight λ of the representation-balance (IPM) term. Only the
    /// counterfactual model reads it.
    pub ipm_weight: f64,
    /// Projection count for the sliced Wasserstein estimate.
    pub n_proj: usize,
    pub seed: u64,
    /// Early-stopping patience in epochs (validation MSE on a held-out 10%).
    pub patience: usize,
    pub pooling: Pooling,
    /// Append the per-dimension turn sums as a fifth block of the MLP
    /// baseline's aggregate vector.
    pub aggregate_counts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 32,
            head_layers: vec![32],
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            ipm_weight: 1.0,
            n_proj: 50,
            seed: 0,
            patience: 10,
            pooling: Pooling::Final,
            aggregate_counts: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::validation(
                "hidden_dim, epochs, batch_size and patience must be positive",
            ));
        }
        if self.head_layers.iter().any(|&w| w == 0) {
            return Err(Error::validation("head layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning rate must be positive and finite"));
        }
        if !(self.ipm_weight >= 0.0 && self.ipm_weight.is_finite()) {
            return Err(Error::validation("IPM weight must be non-negative and finite"));
        }
        if self.n_proj == 0 {
            return Err(Error::validation("n_proj must be positive"));
        }
        Ok(())
    }

    /// Head dimensions [H, hidden…, 1].
    pub(crate) fn head_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.head_layers.len() + 2);
        dims.push(self.hidden_dim);
        dims.extend_from_slice(&self.head_layers);
        dims.push(1);
        dims
    }

    /// Dimensions of the aggregate-vector MLP baseline:
    /// [blocks·D, H, hidden…, 1].
    pub(crate) fn baseline_mlp_dims(&self) -> Vec<usize> {
        let blocks = if self.aggregate_counts { 5 } else { 4 };
        let mut dims = Vec::with_capacity(self.head_layers.len() + 3);
        dims.push(blocks * FEATURE_DIM);
        dims.push(self.hidden_dim);
        dims.extend_from_slice(&self.head_layers);
        dims.push(1);
        dims
    }
}

/// A rating estimate: the model's raw regression output and the same value
/// clamped to the valid rating range. Reported metrics use `clamped`; losses
/// and effect estimates (which rely on additivity) use `raw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw: f64,
    pub clamped: f64,
}

impl Prediction {
    pub fn from_raw(raw: f64) -> Self {
        Prediction { raw, clamped: raw.clamp(1.0, 5.0) }
    }
}

/// Any trained predictor, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    Mlp(BaselineMlpModel),
    Lstm(BaselineLstmModel),
    CfLstm(CfLstmModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Mlp(_) => "mlp",
            Model::Lstm(_) => "lstm",
            Model::CfLstm(_) => "cf-lstm",
        }
    }

    pub fn norm_stats(&self) -> &NormStats {
        match self {
            Model::Mlp(m) => &m.norm_stats,
            Model::Lstm(m) => &m.norm_stats,
            Model::CfLstm(m) => &m.norm_stats,
        }
    }

    /// The hyperparameters the model was trained with.
    pub fn config(&self) -> &TrainConfig {
        match self {
            Model::Mlp(m) => &m.config,
            Model::Lstm(m) => &m.config,
            Model::CfLstm(m) => &m.config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Mlp(m) => m.validate(),
            Model::Lstm(m) => m.validate(),
            Model::CfLstm(m) => m.validate(),
        }
    }

    /// Factual rating estimate for a raw (unnormalized) dialogue. For the
    /// counterfactual model the factual arm comes from `policy` (dialogue
    /// overrides win); the baselines ignore treatments entirely.
    pub fn predict_factual(
        &self,
        d: &Dialogue,
        policy: &crate::treatment::TreatmentPolicy,
    ) -> Result<Prediction> {
        match self {
            Model::Mlp(m) => m.predict(d),
            Model::Lstm(m) => m.predict(d),
            Model::CfLstm(m) => m.predict(d, policy.effective_arm(d)?),
        }
    }
}
