//! Synthetic dialogue generator with a known outcome function and a planted
//! treatment effect — the ground-truth oracle for every causal test in this
//! crate.
//!
//! # The generative model
//!
//! Each dialogue carries two latent scalars: a quality
//! `q = q₀ + amp·sin(2π·day/14)` with `q₀ ~ N(0,1)` — the sine wave gives
//! quality a slow calendar drift, so daily aggregates carry persistent,
//! feature-visible signal — and a heterogeneity driver `u ~ N(0,1)`.
//! Treatment is assigned by a probit rule, `P(arm ≠ 0 | q) = Φ(a − γ·q)`
//! with `a = √(1+γ²)·Φ⁻¹(p₁)`, which makes the marginal treated fraction
//! `p₁` (exactly when `amp = 0`, to within curvature terms otherwise) while
//! low-quality dialogues are treated more often (γ > 0) — the confounding
//! the model has to overcome. Treated dialogues in a K-arm setup pick a
//! sub-arm uniformly.
//!
//! Turn features echo the latents with noise: sentiment valence tracks `q`
//! (depressed further on problem turns), the FED block tracks `q`, the
//! activation and first-DialogRPT dimensions track `u`. ODES categories are
//! placed so the treatment-policy module reproduces the intended arm from
//! the turns alone: control dialogues contain only `Other`, treated ones get
//! at least one problem turn drawn from their arm's category pool.
//!
//! The outcome function is affine in recorded features,
//!
//! ```text
//! f₀(X) = 3.3 + 1.0 · mean(valence) + 1.2 · mean(FED block)
//! ```
//!
//! and the potential outcome for arm `j` is
//!
//! ```text
//! Y(j) = clamp₁,₅( f_j(X) + effect_j + ε ),   ε ~ N(0, σ²)
//! ```
//!
//! with one shared `ε` per dialogue across arms, so the planted effect
//! survives subtraction exactly. Effects: arm j ≥ 1 gets
//! `τ·(1 + 0.3·(j−1))`. With a constant effect every arm shares
//! `f_j = f₀` and the planted shift is purely additive. The heterogeneous
//! tag makes treatment modify the outcome *function*: the additive part is
//! scaled by `(1 + 1.8·tanh(u))`, and treated arms re-tilt the feature
//! weights to `0.0 · mean(valence) + 1.9 · mean(FED)` — an effect a
//! per-arm head represents natively but a single shared head must learn as
//! feature × treatment interactions.
//!
//! Ignorability holds by construction: given the recorded features, every
//! potential outcome is `f(X)` plus noise independent of assignment.
//! Positivity holds for `p₁ ∈ (0,1)`; consistency because the factual
//! rating *is* `Y(T)`.

use crate::data::{Dataset, Dialogue, OdesCategory, TurnFeatures, FED, SENTIMENT};
use crate::error::{Error, Result};
use crate::eval::ate;
use crate::models::CfLstmModel;
use crate::nn::derive_seed;
use crate::treatment::TreatmentPolicy;
use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as GaussCdf};

/// Randomness streams for the generator (disjoint from the trainer's).
const STREAM_DIALOGUE: u64 = 100;

/// How the planted effect varies across dialogues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EffectSpec {
    /// Every treated dialogue shifts by the same amount.
    Constant { tau: f64 },
    /// Treatment modifies the outcome function, not just its level: the
    /// additive shift scales with a per-dialogue latent, τ·(1 + 1.8·tanh(u))
    /// (u also drives the activation and first-DialogRPT features), and
    /// treated arms re-weight how features map to the outcome. Per-arm
    /// heads encode this structurally; single-head models must learn the
    /// interactions.
    Heterogeneous { tau: f64 },
}

impl EffectSpec {
    pub fn tau(&self) -> f64 {
        match *self {
            EffectSpec::Constant { tau } | EffectSpec::Heterogeneous { tau } => tau,
        }
    }

    /// The outcome shift for `arm` in a dialogue with heterogeneity latent
    /// `u`. Arm 0 is the control and always shifts by 0; higher arms get
    /// progressively stronger versions of τ.
    fn effect(&self, arm: usize, u: f64) -> f64 {
        if arm == 0 {
            return 0.0;
        }
        let base = self.tau() * (1.0 + 0.3 * (arm as f64 - 1.0));
        match self {
            EffectSpec::Constant { .. } => base,
            EffectSpec::Heterogeneous { .. } => base * (1.0 + 1.8 * u.tanh()),
        }
    }

    /// (valence, FED) outcome weights for `arm`. Constant effects keep one
    /// outcome function across arms; heterogeneous ones re-tilt it under
    /// treatment.
    fn feature_weights(&self, arm: usize) -> (f64, f64) {
        match self {
            EffectSpec::Heterogeneous { .. } if arm != 0 => (0.0, 1.9),
            _ => (1.0, 1.2),
        }
    }
}

/// Generator configuration. Defaults produce a binary-treatment corpus with
/// a planted constant effect; every field can be overridden from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_dialogues: usize,
    /// Turn counts are uniform on [3, max_turns].
    pub max_turns: usize,
    /// Marginal probability of receiving any treated arm.
    pub p1: f64,
    pub effect: EffectSpec,
    /// Outcome noise σ (the shared ε).
    pub noise_std: f64,
    /// Confounding strength γ: how strongly low quality attracts treatment.
    pub confounding: f64,
    /// Amplitude of the 14-day sine wave that drifts the quality latent by
    /// calendar day. The drift shows up in the features, so day-level
    /// aggregates stay predictable.
    pub day_effect_amp: f64,
    pub start_date: NaiveDate,
    /// Dialogues are spread uniformly over this many days.
    pub n_days: usize,
    /// Total treatment arms including control; arms beyond 2 split the
    /// problem categories into pools (see [`canonical_policy`]).
    pub num_arms: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_dialogues: 1000,
            max_turns: 16,
            p1: 0.3,
            effect: EffectSpec::Constant { tau: -0.7809 },
            noise_std: 0.25,
            confounding: 0.3,
            day_effect_amp: 0.25,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            n_days: 56,
            num_arms: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_dialogues == 0 {
            return Err(Error::validation("n_dialogues must be positive"));
        }
        if self.max_turns < 3 {
            return Err(Error::validation("max_turns must be at least 3"));
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return Err(Error::validation("p1 must lie strictly between 0 and 1 (positivity)"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::validation("noise_std must be non-negative and finite"));
        }
        if !self.confounding.is_finite() {
            return Err(Error::validation("confounding must be finite"));
        }
        if !(self.day_effect_amp >= 0.0 && self.day_effect_amp.is_finite()) {
            return Err(Error::validation("day_effect_amp must be non-negative and finite"));
        }
        if self.n_days == 0 {
            return Err(Error::validation("n_days must be positive"));
        }
        if !(2..=14).contains(&self.num_arms) {
            return Err(Error::validation(
                "num_arms must be between 2 and 14 (13 problem categories to pool)",
            ));
        }
        if !self.effect.tau().is_finite() {
            return Err(Error::validation("effect size must be finite"));
        }
        Ok(())
    }
}

/// One dialogue's ground truth: its assigned arm and the full table of
/// potential outcomes, before and after clamping to the rating scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub id: String,
    pub arm: usize,
    /// f(X) + effect_j + day + ε per arm, unclamped.
    pub y_pre: Vec<f64>,
    /// The same, clamped to [1, 5] — what a rating would actually read.
    pub y: Vec<f64>,
}

/// Ground-truth record accompanying a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub format: String,
    pub num_arms: usize,
    /// Mean of y_pre[j] − y_pre[0] per treated arm j (index 0 ↔ arm 1).
    /// For a constant effect this equals the planted value exactly.
    pub ate_preclamp: Vec<f64>,
    /// Mean of y[j] − y[0]: the effect actually visible on the rating
    /// scale. Tests should target this one whenever clamping was active.
    pub ate_postclamp: Vec<f64>,
    /// Fraction of potential outcomes the clamp moved.
    pub clamped_fraction: f64,
    pub entries: Vec<TruthEntry>,
}

pub const TRUTH_FORMAT: &str = "convqual-truth";

/// The treatment policy a generated dataset is meant to be used with:
/// `Other` is the control, and the 13 problem categories split into
/// `num_arms − 1` contiguous pools (binary: the default policy).
pub fn canonical_policy(num_arms: usize) -> Result<TreatmentPolicy> {
    if !(2..=14).contains(&num_arms) {
        return Err(Error::validation("num_arms must be between 2 and 14"));
    }
    let pools = num_arms - 1;
    let base = 13 / pools;
    let rem = 13 % pools;
    let mut arms = [0usize; 14];
    let mut idx = 0;
    for pool in 0..pools {
        let size = base + usize::from(pool < rem);
        for _ in 0..size {
            arms[idx] = pool + 1;
            idx += 1;
        }
    }
    // arms[13] (Other) stays 0.
    TreatmentPolicy::new(arms)
}

fn day_effect(amp: f64, day: usize) -> f64 {
    amp * (2.0 * std::f64::consts::PI * day as f64 / 14.0).sin()
}

/// Generates a dataset plus its ground-truth record. Same config (and seed)
/// → byte-identical output.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, SynthTruth)> {
    cfg.validate()?;
    let policy = canonical_policy(cfg.num_arms)?;
    let gauss = GaussCdf::new(0.0, 1.0).expect("unit normal");
    // Probit intercept making the marginal treated fraction exactly p1:
    // P(T≠0) = E_q[Φ(a − γq)] = Φ(a / √(1+γ²)).
    let a = (1.0 + cfg.confounding * cfg.confounding).sqrt() * gauss.inverse_cdf(cfg.p1);

    let k = cfg.num_arms;
    let mut dialogues = Vec::with_capacity(cfg.n_dialogues);
    let mut entries = Vec::with_capacity(cfg.n_dialogues);
    let mut clamped = 0usize;
    let dialogue_root = derive_seed(cfg.seed, STREAM_DIALOGUE);

    for i in 0..cfg.n_dialogues {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(dialogue_root, i as u64));
        let day = rng.gen_range(0..cfg.n_days);
        let date = cfg.start_date + Duration::days(day as i64);
        let q: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal)
            + day_effect(cfg.day_effect_amp, day);
        let u: f64 = rng.sample(rand_distr::StandardNormal);

        // Assignment: treated with probability Φ(a − γq), then a uniform
        // sub-arm; placement of problem categories reproduces the arm.
        let treated = rng.gen::<f64>() < gauss.cdf(a - cfg.confounding * q);
        let arm = if treated { rng.gen_range(1..k) } else { 0 };
        let pool: Vec<OdesCategory> = OdesCategory::ALL
            .iter()
            .copied()
            .filter(|c| policy.assign_category(*c).0 == arm)
            .collect();

        let n_turns = rng.gen_range(3..=cfg.max_turns);
        let mut problem = vec![false; n_turns];
        if arm != 0 {
            for p in problem.iter_mut() {
                *p = rng.gen::<f64>() < 0.2;
            }
            if !problem.iter().any(|&p| p) {
                let forced = rng.gen_range(0..n_turns);
                problem[forced] = true;
            }
        }

        let noise = Normal::new(0.0, 0.3).expect("valid normal");
        let mut turns = Vec::with_capacity(n_turns);
        for &is_problem in &problem {
            let odes = if is_problem {
                pool[rng.gen_range(0..pool.len())]
            } else {
                OdesCategory::Other
            };
            let valence = 0.5 * q - if is_problem { 0.2 } else { 0.0 } + noise.sample(&mut rng);
            let satisfaction = 0.3 * q + noise.sample(&mut rng);
            let activation = 0.5 * u + noise.sample(&mut rng);
            let asr = (0.85 + 0.05 * q + 0.05 * noise.sample(&mut rng)).clamp(0.0, 1.0);
            let mut fed = [0.0; 8];
            for f in &mut fed {
                *f = 0.25 * q + noise.sample(&mut rng);
            }
            let relevance = 0.2 * q + noise.sample(&mut rng);
            let dialogrpt = [0.3 * u + noise.sample(&mut rng), 0.1 * q + noise.sample(&mut rng)];
            let idf = 0.5 + 0.1 * noise.sample(&mut rng);
            turns.push(TurnFeatures::new(
                odes,
                [valence, satisfaction, activation],
                asr,
                fed,
                relevance,
                dialogrpt,
                idf,
            ));
        }

        // Outcome: affine in the recorded features (weights possibly
        // arm-dependent), plus the planted arm effect and one shared
        // noise draw.
        let n = n_turns as f64;
        let mean_valence = turns.iter().map(|t| t.features[SENTIMENT.start]).sum::<f64>() / n;
        let mean_fed = turns.iter().map(|t| t.features[FED].iter().sum::<f64>() / 8.0).sum::<f64>() / n;

        let eps = if cfg.noise_std > 0.0 {
            Normal::new(0.0, cfg.noise_std).expect("valid normal").sample(&mut rng)
        } else {
            0.0
        };

        let y_pre: Vec<f64> = (0..k)
            .map(|j| {
                let (wv, wf) = cfg.effect.feature_weights(j);
                3.3 + wv * mean_valence + wf * mean_fed + eps + cfg.effect.effect(j, u)
            })
            .collect();
        let y: Vec<f64> = y_pre.iter().map(|&v| v.clamp(1.0, 5.0)).collect();
        clamped += y_pre.iter().zip(&y).filter(|&(&p, &c)| p != c).count();

        let id = format!("synth-{i:06}");
        dialogues.push(Dialogue::new(&id, date, Some(y[arm]), turns)?);
        entries.push(TruthEntry { id, arm, y_pre, y });
    }

    let n = entries.len() as f64;
    let ate_preclamp: Vec<f64> = (1..k)
        .map(|j| entries.iter().map(|e| e.y_pre[j] - e.y_pre[0]).sum::<f64>() / n)
        .collect();
    let ate_postclamp: Vec<f64> = (1..k)
        .map(|j| entries.iter().map(|e| e.y[j] - e.y[0]).sum::<f64>() / n)
        .collect();

    let truth = SynthTruth {
        format: TRUTH_FORMAT.to_string(),
        num_arms: k,
        ate_preclamp,
        ate_postclamp,
        clamped_fraction: clamped as f64 / (cfg.n_dialogues * k) as f64,
        entries,
    };
    Ok((Dataset::new(dialogues)?, truth))
}

/// How a trained counterfactual model scores against the generator's
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// The model's ATE estimate over the dataset (binary models only).
    pub ate_model: Option<f64>,
    pub ate_true_preclamp: Option<f64>,
    pub ate_true_postclamp: Option<f64>,
    /// |model − post-clamp truth|; the post-clamp effect is what the rating
    /// scale can actually show.
    pub ate_abs_error: Option<f64>,
    /// RMSE of clamped predictions against clamped true outcomes on the
    /// arms the dialogue did *not* receive.
    pub counterfactual_rmse: f64,
    /// Same, on the factual arm — for contrast.
    pub factual_rmse: f64,
}

/// Scores `model` against the generator's potential-outcome table.
pub fn oracle_metrics(model: &CfLstmModel, ds: &Dataset, truth: &SynthTruth) -> Result<OracleReport> {
    model.validate()?;
    if truth.format != TRUTH_FORMAT {
        return Err(Error::validation(format!("not a truth record (format {:?})", truth.format)));
    }
    if model.num_arms() != truth.num_arms {
        return Err(Error::validation(format!(
            "model has {} arms but the truth record {}",
            model.num_arms(),
            truth.num_arms
        )));
    }
    if ds.dialogues.len() != truth.entries.len() {
        return Err(Error::LengthMismatch { left: ds.dialogues.len(), right: truth.entries.len() });
    }

    let mut cf_sq = 0.0;
    let mut cf_n = 0usize;
    let mut f_sq = 0.0;
    for (d, e) in ds.dialogues.iter().zip(&truth.entries) {
        if d.id != e.id {
            return Err(Error::validation(format!(
                "dataset/truth misalignment: dialogue {:?} vs truth entry {:?}",
                d.id, e.id
            )));
        }
        let preds = model.predict_all_arms(d)?;
        for (j, p) in preds.iter().enumerate() {
            let err = p.clamped - e.y[j];
            if j == e.arm {
                f_sq += err * err;
            } else {
                cf_sq += err * err;
                cf_n += 1;
            }
        }
    }
    let n = ds.dialogues.len() as f64;

    let (ate_model, pre, post) = if truth.num_arms == 2 {
        (
            Some(ate(model, ds)?),
            Some(truth.ate_preclamp[0]),
            Some(truth.ate_postclamp[0]),
        )
    } else {
        (None, None, None)
    };

    Ok(OracleReport {
        ate_model,
        ate_true_preclamp: pre,
        ate_true_postclamp: post,
        ate_abs_error: ate_model.zip(post).map(|(m, t)| (m - t).abs()),
        counterfactual_rmse: (cf_sq / cf_n as f64).sqrt(),
        factual_rmse: (f_sq / n).sqrt(),
    })
}
