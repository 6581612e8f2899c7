//! JSON-lines dataset IO.
//!
//! One dialogue per line. Loading is strict: malformed JSON, wrong feature
//! dimension, unknown ODES codes, one-hot/label mismatches, short dialogues,
//! out-of-range ratings and duplicate ids are all hard errors that name the
//! offending line.

use super::{Dataset, Dialogue, OdesCategory, TurnFeatures, FEATURE_DIM};
use crate::error::{Error, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    odes: u8,
    features: Vec<f64>,
    /// Free-text transcript of the turn pair. Accepted so files from richer
    /// exports load without stripping, but opaque to this crate: models
    /// never read it and [`save_dataset`] does not write it back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    date: NaiveDate,
    rating: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    treatment: Option<usize>,
    turns: Vec<TurnRecord>,
}

fn turn_from_record(rec: TurnRecord) -> Result<TurnFeatures> {
    if rec.features.len() != FEATURE_DIM {
        return Err(Error::validation(format!(
            "turn has {} features, expected {FEATURE_DIM}",
            rec.features.len()
        )));
    }
    let mut features = [0.0; FEATURE_DIM];
    features.copy_from_slice(&rec.features);
    let t = TurnFeatures {
        odes: OdesCategory::from_code(rec.odes)?,
        features,
    };
    t.validate_onehot()?;
    Ok(t)
}

fn dialogue_from_record(rec: DialogueRecord) -> Result<Dialogue> {
    let turns = rec
        .turns
        .into_iter()
        .map(turn_from_record)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::validation(format!("dialogue {:?}: {e}", rec.id)))?;
    let mut d = Dialogue::new(rec.id, rec.date, rec.rating, turns)?;
    d.treatment_override = rec.treatment;
    Ok(d)
}

/// Loads a raw dataset from a JSON-lines file. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader = BufReader::new(file);

    let mut dialogues = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: DialogueRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let d = dialogue_from_record(rec).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        dialogues.push(d);
    }
    Dataset::new(dialogues)
}

/// Writes a raw dataset as JSON lines. Normalized datasets are rejected:
/// their one-hot blocks no longer match the categorical labels, so a written
/// file would not load back. Normalization statistics belong in model
/// checkpoints, not data files.
pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    if dataset.norm_stats.is_some() {
        return Err(Error::validation(
            "refusing to write a normalized dataset; save raw features only",
        ));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for d in &dataset.dialogues {
        let rec = DialogueRecord {
            id: d.id.clone(),
            date: d.date,
            rating: d.rating,
            treatment: d.treatment_override,
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecord {
                    odes: t.odes.code(),
                    features: t.features.to_vec(),
                    text: None,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
