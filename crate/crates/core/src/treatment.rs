//! Treatment arms and the mapping from ODES categories to arms.
//!
//! A *treatment* here is a property of how a conversation unfolded — by
//! default, whether any problematic dialogue signal occurred (arm 1) or the
//! whole dialogue stayed neutral (arm 0). Policies generalize this to K arms
//! so models can learn separate outcome heads per arm.

use crate::data::{Dialogue, OdesCategory};
use crate::error::{Error, Result};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;

/// A treatment arm index in `0..K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Treatment(pub usize);

/// Maps each of the 14 ODES categories to a treatment arm.
///
/// Serialized as a JSON object keyed by the numeric ODES code, e.g.
/// `{"1": 1, "2": 1, ..., "14": 0}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentPolicy {
    arms: [usize; OdesCategory::COUNT],
}

impl Default for TreatmentPolicy {
    /// The binary default: the neutral `Other` category maps to arm 0,
    /// every problematic category (including the system failing to
    /// understand) maps to arm 1.
    fn default() -> Self {
        let mut arms = [1; OdesCategory::COUNT];
        arms[OdesCategory::Other.onehot_index()] = 0;
        TreatmentPolicy { arms }
    }
}

impl TreatmentPolicy {
    /// Builds a policy from per-category arms (indexed by ODES code minus
    /// one). Arms must be contiguous: every arm in `0..K` must be used.
    pub fn new(arms: [usize; OdesCategory::COUNT]) -> Result<Self> {
        let p = TreatmentPolicy { arms };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_arms();
        for arm in 0..k {
            if !self.arms.contains(&arm) {
                return Err(Error::validation(format!(
                    "policy uses arm {} but not arm {arm}; arms must be contiguous from 0",
                    k - 1
                )));
            }
        }
        Ok(())
    }

    /// Number of arms K (one past the largest arm index).
    pub fn num_arms(&self) -> usize {
        self.arms.iter().copied().max().unwrap_or(0) + 1
    }

    /// Arm of a single ODES category.
    pub fn assign_category(&self, cat: OdesCategory) -> Treatment {
        Treatment(self.arms[cat.onehot_index()])
    }

    /// Arm of a whole dialogue: the maximum arm over its turns, so any
    /// occurrence of a higher (more problematic) arm dominates.
    pub fn assign_dialogue(&self, d: &Dialogue) -> Treatment {
        Treatment(
            d.turns
                .iter()
                .map(|t| self.arms[t.odes.onehot_index()])
                .max()
                .unwrap_or(0),
        )
    }

    /// Arm actually used for modeling: an explicit per-dialogue override
    /// wins over the policy-derived arm. Errors if the override names an
    /// arm outside this policy's range.
    pub fn effective_arm(&self, d: &Dialogue) -> Result<Treatment> {
        match d.treatment_override {
            Some(a) if a >= self.num_arms() => Err(Error::validation(format!(
                "dialogue {:?} overrides treatment to {a}, but policy has {} arms",
                d.id,
                self.num_arms()
            ))),
            Some(a) => Ok(Treatment(a)),
            None => Ok(self.assign_dialogue(d)),
        }
    }
}

impl Serialize for TreatmentPolicy {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        // BTreeMap<u8, _> would order keys lexicographically once stringified
        // by serde_json ("1", "10", "11", ..., "2"); emit strings through a
        // numeric-ordered map instead.
        let mut map = BTreeMap::new();
        for cat in OdesCategory::ALL {
            map.insert(cat.code(), self.arms[cat.onehot_index()]);
        }
        serializer.collect_map(map.iter().map(|(k, v)| (k.to_string(), *v)))
    }
}

impl<'de> Deserialize<'de> for TreatmentPolicy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, usize>::deserialize(deserializer)?;
        if map.len() != OdesCategory::COUNT {
            return Err(D::Error::custom(format!(
                "policy must map all {} ODES codes, got {}",
                OdesCategory::COUNT,
                map.len()
            )));
        }
        let mut arms = [0usize; OdesCategory::COUNT];
        for (key, arm) in map {
            let code: u8 = key
                .parse()
                .map_err(|_| D::Error::custom(format!("invalid ODES code key {key:?}")))?;
            let cat = OdesCategory::from_code(code).map_err(D::Error::custom)?;
            arms[cat.onehot_index()] = arm;
        }
        TreatmentPolicy::new(arms).map_err(D::Error::custom)
    }
}

/// Per-arm dialogue counts for a dataset under a policy, used to sanity-check
/// overlap (positivity) before causal training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmCounts {
    pub counts: Vec<usize>,
}

impl ArmCounts {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Arms with no dialogues at all.
    pub fn empty_arms(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .filter_map(|(a, &c)| (c == 0).then_some(a))
            .collect()
    }
}

/// Counts dialogues per effective arm and logs a warning for any arm that is
/// empty or holds under 5% of dialogues (a model head for that arm would be
/// trained on almost nothing).
pub fn check_positivity(dialogues: &[Dialogue], policy: &TreatmentPolicy) -> Result<ArmCounts> {
    let mut counts = vec![0usize; policy.num_arms()];
    for d in dialogues {
        counts[policy.effective_arm(d)?.0] += 1;
    }
    let total = dialogues.len().max(1);
    for (arm, &c) in counts.iter().enumerate() {
        if c == 0 {
            log::warn!("treatment arm {arm} has no dialogues; its head cannot be trained");
        } else if (c as f64) < 0.05 * total as f64 {
            log::warn!(
                "treatment arm {arm} holds only {c}/{total} dialogues (<5%); estimates will be noisy"
            );
        }
    }
    Ok(ArmCounts { counts })
}

/// A keyword-rule ODES tagger for turning raw transcripts into category
/// labels in demos and smoke tests. It is deliberately crude — real
/// deployments label turns upstream with a proper classifier — and none of
/// the causal machinery depends on it.
pub fn stub_odes_tagger(user_utterance: &str) -> OdesCategory {
    let u = user_utterance.to_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| u.contains(w));

    if has(&["stop", "go to bed", "goodbye", "bye"]) {
        OdesCategory::UserRequestsStop
    } else if has(&["asked me that", "already asked", "you said that", "again?"]) {
        OdesCategory::UserCallsOutRepetition
    } else if has(&["you just said", "contradict", "that's not what you said"]) {
        OdesCategory::UserCallsOutContradiction
    } else if has(&["repeat", "say that again", "what did you say"]) {
        OdesCategory::UserRequestsRepeat
    } else if has(&["boring", "don't care", "whatever", "not interested"]) {
        OdesCategory::UserDisinterest
    } else if has(&["stupid", "idiot", "dumb bot", "useless"]) {
        OdesCategory::UserInsult
    } else if has(&["that's wrong", "incorrect", "you're wrong", "bad answer"]) {
        OdesCategory::UserCritique
    } else if has(&["what do you mean", "don't understand", "makes no sense", "confused"]) {
        OdesCategory::UserNotUnderstand
    } else if has(&["talk about something else", "change the subject", "different topic"]) {
        OdesCategory::UserRequestsTopicSwitch
    } else if has(&["keep talking about", "stay on", "back to what"]) {
        OdesCategory::UserRejectsTopicSwitch
    } else if has(&["thank you", "thanks", "great job", "love this", "awesome"]) {
        OdesCategory::UserCompliment
    } else if has(&["damn", "hell", "crap"]) {
        OdesCategory::UserObscenity
    } else {
        OdesCategory::Other
    }
}
