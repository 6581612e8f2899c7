//! The counterfactual LSTM: a shared sequence encoder with one regression
//! head per treatment arm, trained on per-arm MSE plus a Wasserstein penalty
//! on the arm-conditional representation distributions.
//!
//! The loss over a mini-batch B with arms 0..K is
//!
//! ```text
//! L = Σ_a mean_{i ∈ B, Tᵢ=a} (h_a(Φᵢ) − yᵢ)²  +  λ · W(Φ|T=0, Φ|T=1)
//! ```
//!
//! where Φᵢ is the pooled encoder output and W is the sliced Wasserstein-1
//! distance between the arms' Φ samples (averaged over arm pairs when K > 2;
//! a pair contributes 0 whenever either arm has no members in the batch).
//! Balancing Φ across arms is what lets head h_a produce a meaningful
//! estimate for dialogues that factually received a different arm.
//!
//! The trade-off weight λ matters. At λ = 0 the heads can exploit arbitrary
//! arm-specific structure in Φ and counterfactual estimates degrade toward
//! the plain LSTM baseline; push λ too high (around 2 and beyond in our
//! synthetic studies) and the encoder collapses the arms so aggressively
//! that the representation stops carrying the dialogue, which also destroys
//! counterfactual transfer. In between, moderate values (0.25–1.0) trade a
//! little factual accuracy for markedly better effect estimates; the exact
//! optimum is data-dependent, so [`TrainConfig::ipm_weight`] exists to tune
//! it per corpus.

use super::trainer::{split_train_val, LoopSpec, TrainLog, STREAM_DIRS, STREAM_EXTEND, STREAM_INIT};
use super::{check_raw, pool_mean, Pooling, Prediction, TrainConfig};
use crate::data::{zscore_fit_dialogues, Dataset, Dialogue, NormStats, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::ipm::{random_unit_directions, sliced_wasserstein_with_dirs_grad};
use crate::nn::{derive_seed, LstmParams, LstmVars, MlpParams, MlpVars, Tape, Var};
use crate::treatment::{check_positivity, Treatment, TreatmentPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One training example: normalized turn vectors, the treatment arm, and the
/// ground-truth rating.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedSeq {
    pub turns: Vec<Vec<f64>>,
    pub arm: Treatment,
    pub rating: f64,
}

impl RatedSeq {
    /// Normalizes a raw dialogue and resolves its arm under `policy`.
    /// Errors on unrated dialogues — losses need targets.
    pub fn from_dialogue(d: &Dialogue, stats: &NormStats, policy: &TreatmentPolicy) -> Result<Self> {
        let rating = d
            .rating
            .ok_or_else(|| Error::validation(format!("unrated dialogue {:?} in a training batch", d.id)))?;
        let arm = policy.effective_arm(d)?;
        let turns = d.turns.iter().map(|t| stats.apply(&t.features).to_vec()).collect();
        Ok(RatedSeq { turns, arm, rating })
    }
}

/// The counterfactual rating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfLstmModel {
    pub encoder: LstmParams,
    /// One regression head per treatment arm; index = arm.
    pub heads: Vec<MlpParams>,
    pub norm_stats: NormStats,
    /// Snapshot of the hyperparameters the model was trained with.
    pub config: TrainConfig,
}

impl CfLstmModel {
    pub fn num_arms(&self) -> usize {
        self.heads.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.heads.len() < 2 {
            return Err(Error::validation(format!(
                "counterfactual model needs at least 2 heads, has {}",
                self.heads.len()
            )));
        }
        for (a, head) in self.heads.iter().enumerate() {
            head.validate()?;
            if head.input_dim() != self.encoder.hidden_dim {
                return Err(Error::shape(format!(
                    "head {a} consumes {} inputs but the encoder emits {}",
                    head.input_dim(),
                    self.encoder.hidden_dim
                )));
            }
            if head.output_dim() != 1 {
                return Err(Error::shape(format!("head {a} must be scalar-valued")));
            }
        }
        self.norm_stats.validate()
    }

    /// Untrained model with seeded initialization.
    pub fn init(num_arms: usize, norm_stats: NormStats, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT));
        let encoder = LstmParams::init(FEATURE_DIM, cfg.hidden_dim, &mut rng);
        let heads = (0..num_arms).map(|_| MlpParams::init(&cfg.head_dims(), &mut rng)).collect();
        CfLstmModel { encoder, heads, norm_stats, config: cfg.clone() }
    }

    /// The dialogue representation Φ for a raw dialogue: normalize, encode,
    /// pool per the trained configuration.
    pub fn phi(&self, d: &Dialogue) -> Result<Vec<f64>> {
        let turns: Vec<[f64; FEATURE_DIM]> = d.turns.iter().map(|t| self.norm_stats.apply(&t.features)).collect();
        self.phi_normed(&turns)
    }

    /// Φ from already-normalized turn rows.
    pub fn phi_normed<S: AsRef<[f64]>>(&self, turns: &[S]) -> Result<Vec<f64>> {
        let (all, last) = self.encoder.forward(turns)?;
        Ok(match self.config.pooling {
            Pooling::Final => last,
            Pooling::Mean => pool_mean(&all),
        })
    }

    /// Rating estimate for a raw dialogue under a chosen arm. The factual
    /// arm yields the factual estimate; any other arm the counterfactual.
    pub fn predict(&self, d: &Dialogue, arm: Treatment) -> Result<Prediction> {
        let phi = self.phi(d)?;
        self.predict_from_phi(&phi, arm)
    }

    pub(crate) fn predict_from_phi(&self, phi: &[f64], arm: Treatment) -> Result<Prediction> {
        let head = self.heads.get(arm.0).ok_or_else(|| {
            Error::validation(format!("arm {} out of range, model has {} heads", arm.0, self.heads.len()))
        })?;
        Ok(Prediction::from_raw(head.forward_scalar(phi)?))
    }

    /// One prediction per arm from a single encoder pass.
    pub fn predict_all_arms(&self, d: &Dialogue) -> Result<Vec<Prediction>> {
        let phi = self.phi(d)?;
        (0..self.heads.len())
            .map(|a| self.predict_from_phi(&phi, Treatment(a)))
            .collect()
    }

    // -- parameter plumbing ---------------------------------------------------

    pub(crate) fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["encoder.w_ih".to_string(), "encoder.w_hh".to_string(), "encoder.b".to_string()];
        for (a, head) in self.heads.iter().enumerate() {
            for li in 0..head.layers.len() {
                names.push(format!("head{a}.layer{li}.w"));
                names.push(format!("head{a}.layer{li}.b"));
            }
        }
        names
    }

    pub(crate) fn to_tensors(&self) -> Vec<Vec<f64>> {
        let mut out = vec![
            self.encoder.w_ih.data().to_vec(),
            self.encoder.w_hh.data().to_vec(),
            self.encoder.b.data().to_vec(),
        ];
        for head in &self.heads {
            for l in &head.layers {
                out.push(l.w.data().to_vec());
                out.push(l.b.data().to_vec());
            }
        }
        out
    }

    pub(crate) fn with_tensors(&self, tensors: &[Vec<f64>]) -> Self {
        let mut m = self.clone();
        let mut it = tensors.iter();
        let mut next = |dst: &mut [f64]| {
            let src = it.next().expect("tensor list too short");
            dst.copy_from_slice(src);
        };
        next(m.encoder.w_ih.data_mut());
        next(m.encoder.w_hh.data_mut());
        next(m.encoder.b.data_mut());
        for head in &mut m.heads {
            for l in &mut head.layers {
                next(l.w.data_mut());
                next(l.b.data_mut());
            }
        }
        assert!(it.next().is_none(), "tensor list too long");
        m
    }

    /// Registers all parameters on a tape in [`to_tensors`] order.
    /// `trainable[i] == false` registers tensor i as a constant.
    pub(crate) fn register(&self, tape: &mut Tape, trainable: &[bool]) -> (LstmVars, Vec<MlpVars>, Vec<Var>) {
        let mut flat = Vec::new();
        let mut k = 0usize;
        let mut grab = |tape: &mut Tape, data: &[f64]| {
            let v = tape.leaf(data.to_vec(), trainable[k]);
            k += 1;
            flat.push(v);
            v
        };
        let enc = LstmVars {
            w_ih: grab(tape, self.encoder.w_ih.data()),
            w_hh: grab(tape, self.encoder.w_hh.data()),
            b: grab(tape, self.encoder.b.data()),
        };
        let heads = self
            .heads
            .iter()
            .map(|head| MlpVars {
                layers: head
                    .layers
                    .iter()
                    .map(|l| (grab(tape, l.w.data()), grab(tape, l.b.data())))
                    .collect(),
            })
            .collect();
        (enc, heads, flat)
    }
}

/// Records Φ for one item and returns its node.
fn phi_tape(tape: &mut Tape, model: &CfLstmModel, enc: &LstmVars, turns: &[Vec<f64>]) -> Var {
    let hs = model.encoder.forward_tape(tape, enc, turns);
    match model.config.pooling {
        Pooling::Final => *hs.last().expect("non-empty sequence"),
        Pooling::Mean => tape.mean(&hs),
    }
}

/// Builds the composite loss for one batch on `tape`. `dirs` are the
/// projection directions for this batch's Wasserstein estimate.
fn build_loss(
    tape: &mut Tape,
    model: &CfLstmModel,
    enc: &LstmVars,
    heads: &[MlpVars],
    batch: &[&RatedSeq],
    dirs: &[Vec<f64>],
    lambda: f64,
) -> Result<Var> {
    let k = model.heads.len();
    let mut sq_by_arm: Vec<Vec<Var>> = vec![Vec::new(); k];
    let mut phi_by_arm: Vec<Vec<Var>> = vec![Vec::new(); k];

    for item in batch {
        let arm = item.arm.0;
        if arm >= k {
            return Err(Error::validation(format!("treatment arm {arm} exceeds model's {k} heads")));
        }
        if item.turns.is_empty() {
            return Err(Error::validation("empty dialogue in batch"));
        }
        let phi = phi_tape(tape, model, enc, &item.turns);
        let pred = model.heads[arm].forward_tape(tape, &heads[arm], phi);
        let err = tape.shift(pred, -item.rating);
        let sq = tape.mul(err, err);
        sq_by_arm[arm].push(sq);
        phi_by_arm[arm].push(phi);
    }

    let mut parts: Vec<Var> = Vec::new();
    for sq in sq_by_arm.iter().filter(|s| !s.is_empty()) {
        let m = tape.mean(sq);
        parts.push(m);
    }

    if lambda > 0.0 {
        // Arm pairs represented in this batch; a pair with an empty side
        // carries no distributional signal and is skipped. The penalty is
        // the average over pairs so K > 2 doesn't inflate the loss scale.
        let eligible: Vec<(usize, usize)> = (0..k)
            .flat_map(|a| ((a + 1)..k).map(move |b| (a, b)))
            .filter(|&(a, b)| !phi_by_arm[a].is_empty() && !phi_by_arm[b].is_empty())
            .collect();
        for &(a, b) in &eligible {
            let pa: Vec<Vec<f64>> = phi_by_arm[a].iter().map(|&v| tape.value(v).to_vec()).collect();
            let pb: Vec<Vec<f64>> = phi_by_arm[b].iter().map(|&v| tape.value(v).to_vec()).collect();
            let (w, ga, gb) = sliced_wasserstein_with_dirs_grad(&pa, &pb, dirs)?;
            let inputs: Vec<Var> = phi_by_arm[a].iter().chain(&phi_by_arm[b]).copied().collect();
            let grads: Vec<Vec<f64>> = ga.into_iter().chain(gb).collect();
            let node = tape.custom_scalar(inputs, w, grads);
            parts.push(tape.scale(node, lambda / eligible.len() as f64));
        }
    }

    if parts.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    Ok(tape.sum(&parts))
}

/// Registers the model on a fresh tape and records the loss for `batch`.
/// Returns the tape, the loss node, and the parameter vars in canonical
/// tensor order.
fn record_loss(model: &CfLstmModel, batch: &[RatedSeq], cfg: &TrainConfig) -> Result<(Tape, Var, Vec<Var>)> {
    model.validate()?;
    let mut tape = Tape::new();
    let (enc, heads, flat) = model.register(&mut tape, &vec![true; model.tensor_names().len()]);
    let refs: Vec<&RatedSeq> = batch.iter().collect();
    let dirs = random_unit_directions(
        model.encoder.hidden_dim,
        cfg.n_proj,
        derive_seed(cfg.seed, STREAM_DIRS),
    );
    let loss = build_loss(&mut tape, model, &enc, &heads, &refs, &dirs, cfg.ipm_weight)?;
    Ok((tape, loss, flat))
}

/// Records the counterfactual loss for `batch` on a fresh tape and returns
/// (tape, loss node). λ, the projection count and the direction seed come
/// from `cfg`. Feature vectors in `batch` must already be normalized with
/// the model's statistics.
pub fn cf_lstm_loss(model: &CfLstmModel, batch: &[RatedSeq], cfg: &TrainConfig) -> Result<(Tape, Var)> {
    let (tape, loss, _) = record_loss(model, batch, cfg)?;
    Ok((tape, loss))
}

/// Loss value plus the analytic gradient of every parameter tensor, in the
/// model's canonical order: encoder `w_ih`, `w_hh`, `b`, then each head's
/// layers' weight and bias in sequence. This is the same reverse-mode pass
/// the trainer consumes, exposed so callers can drive their own optimizers
/// or check the gradients against an independent evaluation of the loss.
pub fn cf_lstm_loss_grads(
    model: &CfLstmModel,
    batch: &[RatedSeq],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (tape, loss, flat) = record_loss(model, batch, cfg)?;
    let grads = tape.backward(loss);
    Ok((tape.scalar(loss), flat.iter().map(|&v| grads.get(v).to_vec()).collect()))
}

/// Factual-arm mean squared error of raw predictions over items — the
/// validation metric for early stopping.
fn factual_mse(model: &CfLstmModel, items: &[RatedSeq], idx: &[usize]) -> Result<f64> {
    let mut acc = 0.0;
    for &i in idx {
        let item = &items[i];
        let phi = model.phi_normed(&item.turns)?;
        let pred = model.predict_from_phi(&phi, item.arm)?;
        let e = pred.raw - item.rating;
        acc += e * e;
    }
    Ok(acc / idx.len() as f64)
}

fn prepare_items(
    train: &Dataset,
    stats: &NormStats,
    policy: &TreatmentPolicy,
) -> Result<Vec<RatedSeq>> {
    train
        .rated()
        .map(|d| RatedSeq::from_dialogue(d, stats, policy))
        .collect()
}

/// Trains a counterfactual model from scratch. Fits normalization on the
/// rated training dialogues, then minimizes [`cf_lstm_loss`] with mini-batch
/// Adam; early-stops on factual MSE over a held-out tenth. Deterministic
/// given (dataset, policy, config).
pub fn train_cf_lstm(train: &Dataset, policy: &TreatmentPolicy, cfg: &TrainConfig) -> Result<(CfLstmModel, TrainLog)> {
    cfg.validate()?;
    policy.validate()?;
    check_raw(train, "training dataset")?;
    let rated: Vec<&Dialogue> = train.rated().collect();
    if rated.is_empty() {
        return Err(Error::validation("no rated dialogues to train on"));
    }
    let k = policy.num_arms();
    if k < 2 {
        return Err(Error::validation("treatment policy must define at least two arms"));
    }
    let counts = check_positivity(&train.dialogues, policy)?;
    if counts.counts.iter().filter(|&&c| c > 0).count() < 2 {
        log::warn!("training data covers fewer than two treatment arms; off-arm heads will be untrained");
    }

    let stats = zscore_fit_dialogues(&rated)?;
    let items = prepare_items(train, &stats, policy)?;
    let model = CfLstmModel::init(k, stats, cfg);

    let (train_idx, val_idx) = split_train_val(items.len(), cfg.seed);
    let names = model.tensor_names();
    let n_tensors = names.len();
    let spec = LoopSpec { cfg, trainable: vec![true; n_tensors], names, start_batch: 0 };
    let dirs_root = derive_seed(cfg.seed, STREAM_DIRS);

    let (tensors, log) = spec.run(
        model.to_tensors(),
        &train_idx,
        !val_idx.is_empty(),
        |tensors, batch, batch_no| {
            let scratch = model.with_tensors(tensors);
            let mut tape = Tape::new();
            let (enc, heads, flat) = scratch.register(&mut tape, &vec![true; n_tensors]);
            let refs: Vec<&RatedSeq> = batch.iter().map(|&i| &items[i]).collect();
            let dirs = random_unit_directions(cfg.hidden_dim, cfg.n_proj, derive_seed(dirs_root, batch_no));
            let loss = build_loss(&mut tape, &scratch, &enc, &heads, &refs, &dirs, cfg.ipm_weight)?;
            let grads = tape.backward(loss);
            Ok((tape.scalar(loss), flat.iter().map(|&v| grads.get(v).to_vec()).collect()))
        },
        |tensors| factual_mse(&model.with_tensors(tensors), &items, &val_idx),
    )?;

    Ok((model.with_tensors(&tensors), log))
}

/// Transfer learning to `k_new` additional treatment arms (§ new heads).
///
/// `new_policy` must define exactly `old K + k_new` arms and is the policy
/// the extended model should be used with from now on. Training runs in two
/// phases over `fresh_data`: first only the new heads learn (every original
/// parameter stays bit-identical), then everything fine-tunes. The original
/// normalization statistics are kept — the frozen encoder was trained in
/// that feature space.
pub fn extend_treatments(
    model: &CfLstmModel,
    k_new: usize,
    fresh_data: &Dataset,
    new_policy: &TreatmentPolicy,
    cfg: &TrainConfig,
) -> Result<(CfLstmModel, TrainLog)> {
    model.validate()?;
    if k_new == 0 {
        return Ok((model.clone(), TrainLog::empty()));
    }
    cfg.validate()?;
    check_raw(fresh_data, "fresh dataset")?;
    let k_old = model.num_arms();
    if new_policy.num_arms() != k_old + k_new {
        return Err(Error::validation(format!(
            "new policy defines {} arms, expected {} (old) + {k_new} (new)",
            new_policy.num_arms(),
            k_old
        )));
    }
    if cfg.hidden_dim != model.encoder.hidden_dim {
        return Err(Error::shape(format!(
            "config hidden_dim {} does not match the trained encoder's {}",
            cfg.hidden_dim, model.encoder.hidden_dim
        )));
    }

    let items = prepare_items(fresh_data, &model.norm_stats, new_policy)?;
    if items.is_empty() {
        return Err(Error::validation("fresh dataset has no rated dialogues"));
    }
    for arm in k_old..k_old + k_new {
        if !items.iter().any(|it| it.arm.0 == arm) {
            return Err(Error::validation(format!("fresh dataset has no examples for new arm {arm}")));
        }
    }

    let mut extended = model.clone();
    // Per-run settings (epochs, lr, λ, …) come from `cfg`; architecture
    // settings stay whatever the original model was built with.
    extended.config = TrainConfig {
        hidden_dim: model.config.hidden_dim,
        head_layers: model.config.head_layers.clone(),
        pooling: model.config.pooling,
        aggregate_counts: model.config.aggregate_counts,
        ..cfg.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EXTEND));
    let mut head_dims = vec![model.encoder.hidden_dim];
    head_dims.extend_from_slice(&cfg.head_layers);
    head_dims.push(1);
    for _ in 0..k_new {
        extended.heads.push(MlpParams::init(&head_dims, &mut rng));
    }

    let names = extended.tensor_names();
    let n_tensors = names.len();
    // Tensors 0..=2 are the encoder; then 2 tensors per head layer, in arm
    // order — everything before the new heads freezes in phase 1.
    let n_frozen = 3 + model.heads.iter().map(|h| 2 * h.layers.len()).sum::<usize>();
    let phase1_mask: Vec<bool> = (0..n_tensors).map(|i| i >= n_frozen).collect();

    let (train_idx, val_idx) = split_train_val(items.len(), cfg.seed);
    let dirs_root = derive_seed(cfg.seed, STREAM_DIRS);

    let run_phase = |start_model: &CfLstmModel, mask: Vec<bool>, start_batch: u64| -> Result<(CfLstmModel, TrainLog)> {
        let reg_mask = mask.clone();
        let spec = LoopSpec { cfg, trainable: mask, names: start_model.tensor_names(), start_batch };
        let (tensors, log) = spec.run(
            start_model.to_tensors(),
            &train_idx,
            !val_idx.is_empty(),
            |tensors, batch, batch_no| {
                let scratch = start_model.with_tensors(tensors);
                let mut tape = Tape::new();
                let (enc, heads, flat) = scratch.register(&mut tape, &reg_mask);
                let refs: Vec<&RatedSeq> = batch.iter().map(|&i| &items[i]).collect();
                let dirs = random_unit_directions(cfg.hidden_dim, cfg.n_proj, derive_seed(dirs_root, batch_no));
                let loss = build_loss(&mut tape, &scratch, &enc, &heads, &refs, &dirs, cfg.ipm_weight)?;
                let grads = tape.backward(loss);
                Ok((tape.scalar(loss), flat.iter().map(|&v| grads.get(v).to_vec()).collect()))
            },
            |tensors| factual_mse(&start_model.with_tensors(tensors), &items, &val_idx),
        )?;
        Ok((start_model.with_tensors(&tensors), log))
    };

    let (after_p1, log1) = run_phase(&extended, phase1_mask, 0)?;
    let (tuned, log2) = run_phase(&after_p1, vec![true; n_tensors], log1.batches)?;
    Ok((tuned, log1.extend(log2)))
}
