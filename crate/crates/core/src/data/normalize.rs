//! Per-dimension Z-score normalization of turn features.
//!
//! Statistics are fit on training data only and stored inside model
//! checkpoints so that inference applies exactly the transform the model was
//! trained with. The standard deviation is the population estimate (divide
//! by n), floored at [`STD_FLOOR`] so constant dimensions map to zero instead
//! of blowing up.

use super::{Dataset, Dialogue, FEATURE_DIM};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Lower bound on the fitted standard deviation of any dimension.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension mean and standard deviation of turn features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != FEATURE_DIM || self.std.len() != FEATURE_DIM {
            return Err(Error::shape(format!(
                "normalization stats have {}/{} dims, expected {FEATURE_DIM}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s >= STD_FLOOR) || !s.is_finite()) {
            return Err(Error::validation("normalization std below floor or non-finite"));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::validation("normalization mean non-finite"));
        }
        Ok(())
    }

    /// Normalizes a single feature vector.
    pub fn apply(&self, features: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            out[i] = (features[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

/// Fits per-dimension statistics over every turn of every dialogue in `ds`.
/// Errors on an empty dataset.
pub fn zscore_fit(ds: &Dataset) -> Result<NormStats> {
    zscore_fit_dialogues(&ds.dialogues.iter().collect::<Vec<_>>())
}

/// [`zscore_fit`] over an explicit dialogue subset (e.g. only the rated
/// dialogues a model actually trains on).
pub fn zscore_fit_dialogues(dialogues: &[&Dialogue]) -> Result<NormStats> {
    let n: usize = dialogues.iter().map(|d| d.turns.len()).sum();
    if n == 0 {
        return Err(Error::validation("cannot fit normalization on an empty dataset"));
    }
    let nf = n as f64;

    let mut mean = vec![0.0; FEATURE_DIM];
    for d in dialogues {
        for t in &d.turns {
            for i in 0..FEATURE_DIM {
                mean[i] += t.features[i];
            }
        }
    }
    for m in &mut mean {
        *m /= nf;
    }

    let mut var = vec![0.0; FEATURE_DIM];
    for d in dialogues {
        for t in &d.turns {
            for i in 0..FEATURE_DIM {
                let c = t.features[i] - mean[i];
                var[i] += c * c;
            }
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v / nf).sqrt().max(STD_FLOOR))
        .collect();

    let stats = NormStats { mean, std };
    stats.validate()?;
    Ok(stats)
}

/// Returns a copy of `ds` with every turn normalized by `stats`. The result
/// carries the stats in `norm_stats` so downstream code can tell raw and
/// normalized data apart.
pub fn zscore_apply(ds: &Dataset, stats: &NormStats) -> Dataset {
    let dialogues = ds
        .dialogues
        .iter()
        .map(|d| Dialogue {
            id: d.id.clone(),
            date: d.date,
            rating: d.rating,
            treatment_override: d.treatment_override,
            turns: d
                .turns
                .iter()
                .map(|t| super::TurnFeatures {
                    odes: t.odes,
                    features: stats.apply(&t.features),
                })
                .collect(),
        })
        .collect();
    Dataset {
        dialogues,
        norm_stats: Some(stats.clone()),
    }
}
