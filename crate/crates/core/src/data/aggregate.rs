//! Dialogue-level feature aggregation for non-sequential models.
//!
//! A dialogue of T turn vectors x_1..x_T collapses to the concatenation
//! [mean, x_1, x_T, x_{T-1}], i.e. mean, first, last and penultimate turn,
//! in that order. With `include_counts` a fifth block of per-dimension sums
//! is appended (over the one-hot block these are raw category counts).

use super::{Dialogue, MIN_TURNS};
use crate::error::{Error, Result};

/// Flattens a dialogue to a fixed-size vector: 4 blocks of [`FEATURE_DIM`],
/// or 5 with `include_counts`.
pub fn aggregate_features(d: &Dialogue, include_counts: bool) -> Result<Vec<f64>> {
    if d.turns.len() < MIN_TURNS {
        return Err(Error::validation(format!(
            "dialogue {:?} has {} turn pairs, need at least {MIN_TURNS} to aggregate",
            d.id,
            d.turns.len()
        )));
    }
    let rows: Vec<&[f64]> = d.turns.iter().map(|t| t.features.as_slice()).collect();
    Ok(aggregate_feature_rows(&rows, include_counts))
}

/// The same aggregation over bare feature rows (e.g. already-normalized turn
/// vectors). Panics if fewer than [`MIN_TURNS`] rows or on ragged rows —
/// callers own validation on this path.
pub fn aggregate_feature_rows<S: AsRef<[f64]>>(rows: &[S], include_counts: bool) -> Vec<f64> {
    assert!(rows.len() >= MIN_TURNS, "aggregation needs at least {MIN_TURNS} rows");
    let t = rows.len();
    let dim = rows[0].as_ref().len();
    let blocks = if include_counts { 5 } else { 4 };
    let mut out = Vec::with_capacity(blocks * dim);

    let mut sum = vec![0.0; dim];
    for row in rows {
        let row = row.as_ref();
        assert_eq!(row.len(), dim, "ragged feature rows");
        for i in 0..dim {
            sum[i] += row[i];
        }
    }
    out.extend(sum.iter().map(|s| s / t as f64));
    out.extend_from_slice(rows[0].as_ref());
    out.extend_from_slice(rows[t - 1].as_ref());
    out.extend_from_slice(rows[t - 2].as_ref());
    if include_counts {
        out.extend_from_slice(&sum);
    }
    out
}
