//! Masking-based augmentation: poorly-rated dialogues spawn extra training
//! examples by cutting everything after a treated turn. The intuition: if a
//! problematic system turn sank the conversation, then the conversation *up
//! to and including that turn* is itself a plausible poorly-rated dialogue —
//! one that ends on the treatment.
//!
//! The pipeline is select → mask: [`select_low_rated`] picks the source
//! dialogues, [`augment_by_masking`] emits one prefix per qualifying treated
//! turn, and [`augment_dataset`] wires the two together over a whole dataset.

use crate::data::{Dataset, Dialogue, MIN_TURNS};
use crate::error::Result;
use crate::treatment::TreatmentPolicy;

/// Emits one prefix dialogue per treated turn of `d` that leaves at least
/// `min_len` turns. A turn at 0-based index `m` with a non-control arm under
/// `policy` yields the prefix `turns[0..=m]` (length m+1) when m+1 ≥
/// `min_len`, with id `<parent>#aug<m>` and the parent's date and rating.
///
/// The prefixes carry no treatment override — each one ends on its treated
/// turn, so the policy already assigns them a treated arm. The input is
/// never modified; an empty vector means no turn qualified.
///
/// `min_len` below the dialogue length invariant would emit invalid
/// dialogues, so it must be at least [`MIN_TURNS`].
pub fn augment_by_masking(d: &Dialogue, policy: &TreatmentPolicy, min_len: usize) -> Vec<Dialogue> {
    assert!(
        min_len >= MIN_TURNS,
        "min_len {min_len} would emit dialogues below the {MIN_TURNS}-turn minimum"
    );
    let mut out = Vec::new();
    for (m, turn) in d.turns.iter().enumerate() {
        if policy.assign_category(turn.odes).0 == 0 || m + 1 < min_len {
            continue;
        }
        let prefix = Dialogue::new(
            format!("{}#aug{m}", d.id),
            d.date,
            d.rating,
            d.turns[..=m].to_vec(),
        )
        .expect("prefix of a valid dialogue with length >= MIN_TURNS is valid");
        out.push(prefix);
    }
    out
}

/// Keeps the rated dialogues with rating strictly below `threshold`
/// (3.0 matches the satisfied/unsatisfied boundary). Unrated dialogues are
/// never selected.
pub fn select_low_rated(ds: &Dataset, threshold: f64) -> Dataset {
    Dataset {
        dialogues: ds
            .dialogues
            .iter()
            .filter(|d| d.rating.is_some_and(|r| r < threshold))
            .cloned()
            .collect(),
        norm_stats: ds.norm_stats.clone(),
    }
}

/// Runs the full pipeline over `ds`: selects dialogues rated below
/// `threshold`, masks each one, and returns the generated dialogues as a
/// dataset of their own (callers concatenate with the original training
/// data as they see fit). Output order is dataset order, then ascending
/// turn index within each parent.
pub fn augment_dataset(
    ds: &Dataset,
    policy: &TreatmentPolicy,
    threshold: f64,
    min_len: usize,
) -> Result<Dataset> {
    policy.validate()?;
    let generated = select_low_rated(ds, threshold)
        .dialogues
        .iter()
        .flat_map(|d| augment_by_masking(d, policy, min_len))
        .collect();
    Dataset::new(generated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{OdesCategory, TurnFeatures};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    /// A turn whose arm under the default policy is 1 (treated) or 0.
    fn turn(treated: bool, fill: f64) -> TurnFeatures {
        let odes = if treated { OdesCategory::UserDisinterest } else { OdesCategory::Other };
        TurnFeatures::new(odes, [fill; 3], fill, [fill; 8], fill, [fill; 2], fill)
    }

    fn dialogue(id: &str, rating: Option<f64>, pattern: &[bool]) -> Dialogue {
        let turns = pattern
            .iter()
            .enumerate()
            .map(|(i, &t)| turn(t, i as f64 * 0.1))
            .collect();
        Dialogue::new(id, date("2023-06-05"), rating, turns).unwrap()
    }

    #[test]
    fn masks_after_each_qualifying_treated_turn() {
        let policy = TreatmentPolicy::default();
        let d = dialogue("d1", Some(2.0), &[false, false, true, false, true]);
        let out = augment_by_masking(&d, &policy, 3);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].id, "d1#aug2");
        assert_eq!(out[0].turns.len(), 3);
        assert_eq!(out[1].id, "d1#aug4");
        assert_eq!(out[1].turns.len(), 5);
        for g in &out {
            assert_eq!(g.rating, Some(2.0));
            assert_eq!(g.date, d.date);
            // Each prefix ends on its treated turn, so the policy labels it
            // treated without any override.
            assert_eq!(g.treatment_override, None);
            assert_eq!(policy.effective_arm(g).unwrap().0, 1);
        }
    }

    #[test]
    fn untreated_dialogues_produce_nothing() {
        let policy = TreatmentPolicy::default();
        let d = dialogue("d", Some(1.0), &[false; 6]);
        assert!(augment_by_masking(&d, &policy, 3).is_empty());
    }

    #[test]
    fn short_prefixes_are_suppressed() {
        let policy = TreatmentPolicy::default();
        let d = dialogue("d", Some(1.0), &[true, true, false]);
        assert!(augment_by_masking(&d, &policy, 3).is_empty());
    }

    #[test]
    fn emitted_turns_are_bit_identical_prefixes() {
        let policy = TreatmentPolicy::default();
        let d = dialogue("d", Some(2.5), &[true, false, true, true]);
        let before = d.clone();
        let out = augment_by_masking(&d, &policy, 3);
        assert_eq!(d, before, "input must not be mutated");
        for g in &out {
            assert_eq!(g.turns.as_slice(), &d.turns[..g.turns.len()]);
        }
        // Treated turns at indices 0, 2, 3; prefixes of length 1 and 3 and 4,
        // of which lengths 3 and 4 qualify.
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].turns.len(), 4, "a treated final turn emits the full-length copy");
    }

    #[test]
    fn selection_keeps_strictly_below_threshold() {
        let ds = Dataset::new(vec![
            dialogue("a", Some(1.0), &[false; 3]),
            dialogue("b", Some(2.9), &[false; 3]),
            dialogue("c", Some(3.0), &[false; 3]),
            dialogue("d", Some(5.0), &[false; 3]),
            dialogue("e", None, &[false; 3]),
        ])
        .unwrap();
        let low = select_low_rated(&ds, 3.0);
        let ids: Vec<&str> = low.dialogues.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(select_low_rated(&ds, 1.0).dialogues.is_empty());
    }

    #[test]
    fn dataset_pipeline_selects_then_masks() {
        let policy = TreatmentPolicy::default();
        let ds = Dataset::new(vec![
            dialogue("low", Some(2.0), &[false, false, true]),
            dialogue("high", Some(4.0), &[false, false, true]),
        ])
        .unwrap();
        let out = augment_dataset(&ds, &policy, 3.0, 3).unwrap();
        assert_eq!(out.dialogues.len(), 1);
        assert_eq!(out.dialogues[0].id, "low#aug2");
    }

    #[test]
    #[should_panic(expected = "min_len")]
    fn tiny_min_len_is_a_contract_violation() {
        let d = dialogue("d", Some(1.0), &[true, true, true]);
        augment_by_masking(&d, &TreatmentPolicy::default(), 2);
    }

    proptest! {
        /// |output| = #{m : arm(turn m) ≠ 0 ∧ m+1 ≥ min_len}, and every
        /// output is a valid dialogue.
        #[test]
        fn count_law(pattern in proptest::collection::vec(any::<bool>(), 3..12), min_len in 3usize..6) {
            let policy = TreatmentPolicy::default();
            let d = dialogue("p", Some(2.0), &pattern);
            let out = augment_by_masking(&d, &policy, min_len);
            let expected = pattern
                .iter()
                .enumerate()
                .filter(|&(m, &t)| t && m + 1 >= min_len)
                .count();
            prop_assert_eq!(out.len(), expected);
            for g in &out {
                prop_assert!(g.turns.len() >= min_len);
                prop_assert!(g.validate().is_ok());
            }
        }
    }
}
