//! Core data model: dialogues, turn-level feature vectors, datasets.
//!
//! Every turn pair carries a fixed 30-dimensional numeric feature vector plus
//! a categorical ODES label. The layout of the vector is frozen (see
//! `docs/dataset-format.md` and the slice constants below); all file IO,
//! normalization and model code indexes into it through those constants.

mod aggregate;
mod io;
mod normalize;

pub use aggregate::{aggregate_feature_rows, aggregate_features};
pub use io::{load_dataset, save_dataset};
pub use normalize::{zscore_apply, zscore_fit, zscore_fit_dialogues, NormStats, STD_FLOOR};

use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::collections::HashSet;
use std::ops::Range;

/// Total length of the flattened per-turn feature vector.
pub const FEATURE_DIM: usize = 30;

/// Minimum number of turn pairs per dialogue.
pub const MIN_TURNS: usize = 3;

/// Slice of the feature vector holding the 14-way ODES one-hot encoding.
pub const ODES_ONEHOT: Range<usize> = 0..14;
/// Sentiment valence, satisfaction, activation.
pub const SENTIMENT: Range<usize> = 14..17;
/// ASR confidence in [0, 1].
pub const ASR_CONFIDENCE: usize = 17;
/// FED scores: interestingness, engagingness, specificity, relevance,
/// correctness, semantic appropriateness, understandability, fluency.
pub const FED: Range<usize> = 18..26;
/// DialoGPT response relevance.
pub const DIALOGPT_RELEVANCE: usize = 26;
/// DialogRPT specificity width and depth.
pub const DIALOGRPT: Range<usize> = 27..29;
/// Mean normalized IDF of the response.
pub const MEAN_NORM_IDF: usize = 29;

/// The 14 ODES categories of user/system dialogue signals.
///
/// Numeric codes 1-14 are the on-disk representation. `Other` (14) is the
/// designated neutral category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum OdesCategory {
    UserDisinterest = 1,
    UserCritique = 2,
    UserNotUnderstand = 3,
    UserRequestsTopicSwitch = 4,
    UserObscenity = 5,
    UserRejectsTopicSwitch = 6,
    UserRequestsRepeat = 7,
    UserRequestsStop = 8,
    UserInsult = 9,
    UserCompliment = 10,
    UserCallsOutRepetition = 11,
    UserCallsOutContradiction = 12,
    SystemNotUnderstand = 13,
    Other = 14,
}

impl OdesCategory {
    pub const COUNT: usize = 14;

    pub const ALL: [OdesCategory; 14] = [
        OdesCategory::UserDisinterest,
        OdesCategory::UserCritique,
        OdesCategory::UserNotUnderstand,
        OdesCategory::UserRequestsTopicSwitch,
        OdesCategory::UserObscenity,
        OdesCategory::UserRejectsTopicSwitch,
        OdesCategory::UserRequestsRepeat,
        OdesCategory::UserRequestsStop,
        OdesCategory::UserInsult,
        OdesCategory::UserCompliment,
        OdesCategory::UserCallsOutRepetition,
        OdesCategory::UserCallsOutContradiction,
        OdesCategory::SystemNotUnderstand,
        OdesCategory::Other,
    ];

    /// Numeric code used in dataset files (1-14).
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code.wrapping_sub(1) as usize)
            .copied()
            .ok_or_else(|| Error::validation(format!("invalid ODES code {code}, expected 1-14")))
    }

    /// Whether this is the neutral `Other` category.
    pub fn is_other(self) -> bool {
        self == OdesCategory::Other
    }

    /// Zero-based index into the one-hot block of the feature vector.
    pub fn onehot_index(self) -> usize {
        self as usize - 1
    }
}

/// Feature vector of a single turn pair (user utterance + system response).
#[derive(Debug, Clone, PartialEq)]
pub struct TurnFeatures {
    pub odes: OdesCategory,
    pub features: [f64; FEATURE_DIM],
}

impl TurnFeatures {
    /// Builds a raw (unnormalized) turn from structured parts; the one-hot
    /// block is derived from `odes`.
    pub fn new(
        odes: OdesCategory,
        sentiment: [f64; 3],
        asr_confidence: f64,
        fed: [f64; 8],
        dialogpt_relevance: f64,
        dialogrpt: [f64; 2],
        mean_norm_idf: f64,
    ) -> Self {
        let mut features = [0.0; FEATURE_DIM];
        features[odes.onehot_index()] = 1.0;
        features[SENTIMENT].copy_from_slice(&sentiment);
        features[ASR_CONFIDENCE] = asr_confidence;
        features[FED].copy_from_slice(&fed);
        features[DIALOGPT_RELEVANCE] = dialogpt_relevance;
        features[DIALOGRPT].copy_from_slice(&dialogrpt);
        features[MEAN_NORM_IDF] = mean_norm_idf;
        TurnFeatures { odes, features }
    }

    pub fn onehot(&self) -> &[f64] {
        &self.features[ODES_ONEHOT]
    }

    pub fn sentiment(&self) -> &[f64] {
        &self.features[SENTIMENT]
    }

    pub fn asr_confidence(&self) -> f64 {
        self.features[ASR_CONFIDENCE]
    }

    pub fn fed(&self) -> &[f64] {
        &self.features[FED]
    }

    pub fn dialogpt_relevance(&self) -> f64 {
        self.features[DIALOGPT_RELEVANCE]
    }

    pub fn dialogrpt(&self) -> &[f64] {
        &self.features[DIALOGRPT]
    }

    pub fn mean_norm_idf(&self) -> f64 {
        self.features[MEAN_NORM_IDF]
    }

    /// Checks that the one-hot block matches the categorical label exactly.
    /// Only meaningful for raw (unnormalized) features.
    pub fn validate_onehot(&self) -> Result<()> {
        for (i, &v) in self.features[ODES_ONEHOT].iter().enumerate() {
            let expected = if i == self.odes.onehot_index() { 1.0 } else { 0.0 };
            if v != expected {
                return Err(Error::validation(format!(
                    "one-hot dim {i} is {v}, inconsistent with ODES code {}",
                    self.odes.code()
                )));
            }
        }
        Ok(())
    }
}

/// One dialogue: an ordered sequence of turn pairs with optional user rating.
///
/// `treatment_override`, when present, pins the dialogue's treatment arm
/// regardless of what the policy would derive from its ODES labels. It is
/// written by the treatment-inversion protocol and absent in ordinary data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub date: NaiveDate,
    pub rating: Option<f64>,
    pub treatment_override: Option<usize>,
    pub turns: Vec<TurnFeatures>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, date: NaiveDate, rating: Option<f64>, turns: Vec<TurnFeatures>) -> Result<Self> {
        let d = Dialogue {
            id: id.into(),
            date,
            rating,
            treatment_override: None,
            turns,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns.len() < MIN_TURNS {
            return Err(Error::validation(format!(
                "dialogue {:?} has {} turn pairs, need at least {MIN_TURNS}",
                self.id,
                self.turns.len()
            )));
        }
        if let Some(r) = self.rating {
            if !(1.0..=5.0).contains(&r) {
                return Err(Error::validation(format!(
                    "dialogue {:?} rating {r} outside [1, 5]",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn is_rated(&self) -> bool {
        self.rating.is_some()
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// An immutable collection of dialogues, optionally normalized.
///
/// `norm_stats` is `Some` exactly when the features have been Z-scored
/// (by [`zscore_apply`]); raw datasets loaded from disk carry `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub dialogues: Vec<Dialogue>,
    pub norm_stats: Option<NormStats>,
}

impl Dataset {
    /// Validates each dialogue and id uniqueness.
    pub fn new(dialogues: Vec<Dialogue>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &dialogues {
            d.validate()?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::validation(format!("duplicate dialogue id {:?}", d.id)));
            }
        }
        Ok(Dataset { dialogues, norm_stats: None })
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    /// Dialogues with a ground-truth rating.
    pub fn rated(&self) -> impl Iterator<Item = &Dialogue> {
        self.dialogues.iter().filter(|d| d.is_rated())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn turn(odes: OdesCategory, fill: f64) -> TurnFeatures {
        TurnFeatures::new(
            odes,
            [fill; 3],
            fill,
            [fill; 8],
            fill,
            [fill; 2],
            fill,
        )
    }

    pub(crate) fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn odes_codes_round_trip() {
        for cat in OdesCategory::ALL {
            assert_eq!(OdesCategory::from_code(cat.code()).unwrap(), cat);
        }
        assert!(OdesCategory::from_code(0).is_err());
        assert!(OdesCategory::from_code(15).is_err());
        assert_eq!(OdesCategory::ALL.len(), OdesCategory::COUNT);
        assert!(OdesCategory::Other.is_other());
    }

    #[test]
    fn feature_layout_covers_all_dims() {
        assert_eq!(
            ODES_ONEHOT.len() + SENTIMENT.len() + 1 + FED.len() + 1 + DIALOGRPT.len() + 1,
            FEATURE_DIM
        );
        assert_eq!(MEAN_NORM_IDF, FEATURE_DIM - 1);
    }

    #[test]
    fn structured_constructor_places_fields() {
        let t = TurnFeatures::new(
            OdesCategory::UserCompliment,
            [0.1, 0.2, 0.3],
            0.9,
            [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            0.5,
            [0.6, 0.7],
            0.8,
        );
        assert_eq!(t.onehot()[OdesCategory::UserCompliment.onehot_index()], 1.0);
        assert_eq!(t.onehot().iter().sum::<f64>(), 1.0);
        assert_eq!(t.sentiment(), &[0.1, 0.2, 0.3]);
        assert_eq!(t.asr_confidence(), 0.9);
        assert_eq!(t.fed()[7], 8.0);
        assert_eq!(t.dialogpt_relevance(), 0.5);
        assert_eq!(t.dialogrpt(), &[0.6, 0.7]);
        assert_eq!(t.mean_norm_idf(), 0.8);
        t.validate_onehot().unwrap();
    }

    #[test]
    fn onehot_validation_catches_mismatch() {
        let mut t = turn(OdesCategory::Other, 0.0);
        t.features[0] = 1.0;
        assert!(t.validate_onehot().is_err());
    }

    #[test]
    fn dialogue_rejects_short_and_out_of_range() {
        let turns = vec![turn(OdesCategory::Other, 0.0); 2];
        assert!(Dialogue::new("d1", date("2023-01-01"), None, turns).is_err());

        let turns = vec![turn(OdesCategory::Other, 0.0); 3];
        assert!(Dialogue::new("d1", date("2023-01-01"), Some(5.5), turns.clone()).is_err());
        assert!(Dialogue::new("d1", date("2023-01-01"), Some(0.9), turns.clone()).is_err());
        assert!(Dialogue::new("d1", date("2023-01-01"), Some(5.0), turns).is_ok());
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let turns = vec![turn(OdesCategory::Other, 0.0); 3];
        let d1 = Dialogue::new("a", date("2023-01-01"), None, turns.clone()).unwrap();
        let d2 = Dialogue::new("a", date("2023-01-02"), None, turns).unwrap();
        assert!(Dataset::new(vec![d1, d2]).is_err());
    }
}
