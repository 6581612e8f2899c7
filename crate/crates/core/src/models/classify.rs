//! Turning continuous rating estimates into the two classification views
//! used for reporting: a satisfied/unsatisfied split and the rounded
//! 1–5 star scale.

use serde::{Deserialize, Serialize};

/// A classification scheme over rating estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// 0 = unsatisfied (rating below 3), 1 = satisfied.
    Binary,
    /// Nearest star 1–5, with halves rounding up.
    FiveClass,
}

/// Bins a rating estimate under `scheme`.
///
/// Binary: estimates below 3 map to class 0, everything else to class 1.
/// Five-class: round-half-up to the nearest integer, clamped to 1..=5
/// (so 4.5 → 5 and 3.4 → 3).
pub fn classify(estimate: f64, scheme: Scheme) -> u8 {
    match scheme {
        Scheme::Binary => {
            if estimate < 3.0 {
                0
            } else {
                1
            }
        }
        Scheme::FiveClass => (estimate + 0.5).floor().clamp(1.0, 5.0) as u8,
    }
}
