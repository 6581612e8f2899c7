//! Treatment-blind baseline predictors: an MLP over fixed-size dialogue
//! aggregates and a single-head LSTM over the turn sequence. Both share the
//! counterfactual model's encoder/optimizer machinery but know nothing about
//! arms — they exist to show what sequence modelling and representation
//! balancing each buy.

use super::trainer::{split_train_val, LoopSpec, TrainLog, STREAM_INIT};
use super::{check_raw, pool_mean, Pooling, Prediction, RatedSeq, TrainConfig};
use crate::data::{aggregate_feature_rows, zscore_fit_dialogues, Dataset, Dialogue, NormStats, FEATURE_DIM, MIN_TURNS};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, LstmParams, MlpParams, Tape, Var};
use crate::treatment::Treatment;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// MLP baseline: dialogue → aggregate feature vector → rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMlpModel {
    pub regressor: MlpParams,
    pub norm_stats: NormStats,
    pub config: TrainConfig,
}

impl BaselineMlpModel {
    pub fn validate(&self) -> Result<()> {
        self.regressor.validate()?;
        let expect = self.config.baseline_mlp_dims()[0];
        if self.regressor.input_dim() != expect {
            return Err(Error::shape(format!(
                "regressor consumes {} inputs but the aggregate vector has {expect}",
                self.regressor.input_dim()
            )));
        }
        if self.regressor.output_dim() != 1 {
            return Err(Error::shape("regressor must be scalar-valued"));
        }
        self.norm_stats.validate()
    }

    /// The normalized aggregate vector the regressor consumes.
    fn aggregate(&self, d: &Dialogue) -> Result<Vec<f64>> {
        if d.turns.len() < MIN_TURNS {
            return Err(Error::validation(format!(
                "dialogue {:?} has {} turns, need at least {MIN_TURNS}",
                d.id,
                d.turns.len()
            )));
        }
        let rows: Vec<[f64; FEATURE_DIM]> = d.turns.iter().map(|t| self.norm_stats.apply(&t.features)).collect();
        Ok(aggregate_feature_rows(&rows, self.config.aggregate_counts))
    }

    pub fn predict(&self, d: &Dialogue) -> Result<Prediction> {
        let x = self.aggregate(d)?;
        Ok(Prediction::from_raw(self.regressor.forward_scalar(&x)?))
    }

    fn tensor_names(&self) -> Vec<String> {
        (0..self.regressor.layers.len())
            .flat_map(|li| [format!("regressor.layer{li}.w"), format!("regressor.layer{li}.b")])
            .collect()
    }

    fn to_tensors(&self) -> Vec<Vec<f64>> {
        self.regressor
            .layers
            .iter()
            .flat_map(|l| [l.w.data().to_vec(), l.b.data().to_vec()])
            .collect()
    }

    fn with_tensors(&self, tensors: &[Vec<f64>]) -> Self {
        let mut m = self.clone();
        let mut it = tensors.iter();
        for l in &mut m.regressor.layers {
            l.w.data_mut().copy_from_slice(it.next().expect("tensor list too short"));
            l.b.data_mut().copy_from_slice(it.next().expect("tensor list too short"));
        }
        assert!(it.next().is_none(), "tensor list too long");
        m
    }
}

/// LSTM baseline: the same encoder as the counterfactual model, but exactly
/// one regression head and no representation balancing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineLstmModel {
    pub encoder: LstmParams,
    pub head: MlpParams,
    pub norm_stats: NormStats,
    pub config: TrainConfig,
}

impl BaselineLstmModel {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.head.validate()?;
        if self.head.input_dim() != self.encoder.hidden_dim {
            return Err(Error::shape(format!(
                "head consumes {} inputs but the encoder emits {}",
                self.head.input_dim(),
                self.encoder.hidden_dim
            )));
        }
        if self.head.output_dim() != 1 {
            return Err(Error::shape("head must be scalar-valued"));
        }
        self.norm_stats.validate()
    }

    fn phi_normed<S: AsRef<[f64]>>(&self, turns: &[S]) -> Result<Vec<f64>> {
        let (all, last) = self.encoder.forward(turns)?;
        Ok(match self.config.pooling {
            Pooling::Final => last,
            Pooling::Mean => pool_mean(&all),
        })
    }

    pub fn predict(&self, d: &Dialogue) -> Result<Prediction> {
        let turns: Vec<[f64; FEATURE_DIM]> = d.turns.iter().map(|t| self.norm_stats.apply(&t.features)).collect();
        let phi = self.phi_normed(&turns)?;
        Ok(Prediction::from_raw(self.head.forward_scalar(&phi)?))
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["encoder.w_ih".to_string(), "encoder.w_hh".to_string(), "encoder.b".to_string()];
        for li in 0..self.head.layers.len() {
            names.push(format!("head.layer{li}.w"));
            names.push(format!("head.layer{li}.b"));
        }
        names
    }

    fn to_tensors(&self) -> Vec<Vec<f64>> {
        let mut out = vec![
            self.encoder.w_ih.data().to_vec(),
            self.encoder.w_hh.data().to_vec(),
            self.encoder.b.data().to_vec(),
        ];
        for l in &self.head.layers {
            out.push(l.w.data().to_vec());
            out.push(l.b.data().to_vec());
        }
        out
    }

    fn with_tensors(&self, tensors: &[Vec<f64>]) -> Self {
        let mut m = self.clone();
        let mut it = tensors.iter();
        let mut next = |dst: &mut [f64]| dst.copy_from_slice(it.next().expect("tensor list too short"));
        next(m.encoder.w_ih.data_mut());
        next(m.encoder.w_hh.data_mut());
        next(m.encoder.b.data_mut());
        for l in &mut m.head.layers {
            next(l.w.data_mut());
            next(l.b.data_mut());
        }
        assert!(it.next().is_none(), "tensor list too long");
        m
    }
}

/// Loss construction plus the registered parameter vars (in
/// [`BaselineLstmModel::to_tensors`] order) for the optimizer.
fn lstm_loss_vars(model: &BaselineLstmModel, batch: &[&RatedSeq]) -> Result<(Tape, Var, Vec<Var>)> {
    model.validate()?;
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let mut tape = Tape::new();
    let enc = model.encoder.register(&mut tape, true);
    let head = model.head.register(&mut tape, true);
    let mut flat = vec![enc.w_ih, enc.w_hh, enc.b];
    for &(w, b) in &head.layers {
        flat.push(w);
        flat.push(b);
    }
    let mut sqs = Vec::with_capacity(batch.len());
    for item in batch {
        if item.turns.is_empty() {
            return Err(Error::validation("empty dialogue in batch"));
        }
        let hs = model.encoder.forward_tape(&mut tape, &enc, &item.turns);
        let phi = match model.config.pooling {
            Pooling::Final => *hs.last().expect("non-empty sequence"),
            Pooling::Mean => tape.mean(&hs),
        };
        let pred = model.head.forward_tape(&mut tape, &head, phi);
        let err = tape.shift(pred, -item.rating);
        sqs.push(tape.mul(err, err));
    }
    let loss = tape.mean(&sqs);
    Ok((tape, loss, flat))
}

/// Records the LSTM baseline's mean-squared-error loss for `batch` on a
/// fresh tape: encode, pool, regress, square, average — in batch order.
/// (The `arm` field of the items is ignored.)
pub fn baseline_lstm_loss(model: &BaselineLstmModel, batch: &[RatedSeq]) -> Result<(Tape, Var)> {
    let refs: Vec<&RatedSeq> = batch.iter().collect();
    lstm_loss_vars(model, &refs).map(|(tape, loss, _)| (tape, loss))
}

/// Shared setup for both baselines: validation, normalization fit, and the
/// (turns, rating) items. Treatment arms are irrelevant here, so every item
/// carries arm 0.
fn baseline_items(train: &Dataset, cfg: &TrainConfig) -> Result<(NormStats, Vec<RatedSeq>)> {
    cfg.validate()?;
    check_raw(train, "training dataset")?;
    let rated: Vec<&Dialogue> = train.rated().collect();
    if rated.is_empty() {
        return Err(Error::validation("no rated dialogues to train on"));
    }
    let stats = zscore_fit_dialogues(&rated)?;
    let items = rated
        .iter()
        .map(|d| RatedSeq {
            turns: d.turns.iter().map(|t| stats.apply(&t.features).to_vec()).collect(),
            arm: Treatment(0),
            rating: d.rating.expect("rated() yields rated dialogues"),
        })
        .collect();
    Ok((stats, items))
}

/// Trains the aggregate-vector MLP baseline.
pub fn train_baseline_mlp(train: &Dataset, cfg: &TrainConfig) -> Result<(BaselineMlpModel, TrainLog)> {
    let (stats, items) = baseline_items(train, cfg)?;
    let xs: Vec<Vec<f64>> = items
        .iter()
        .map(|it| aggregate_feature_rows(&it.turns, cfg.aggregate_counts))
        .collect();
    let ys: Vec<f64> = items.iter().map(|it| it.rating).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT));
    let model = BaselineMlpModel {
        regressor: MlpParams::init(&cfg.baseline_mlp_dims(), &mut rng),
        norm_stats: stats,
        config: cfg.clone(),
    };

    let (train_idx, val_idx) = split_train_val(items.len(), cfg.seed);
    let names = model.tensor_names();
    let spec = LoopSpec { cfg, trainable: vec![true; names.len()], names, start_batch: 0 };

    let (tensors, log) = spec.run(
        model.to_tensors(),
        &train_idx,
        !val_idx.is_empty(),
        |tensors, batch, _| {
            let scratch = model.with_tensors(tensors);
            let mut tape = Tape::new();
            let vars = scratch.regressor.register(&mut tape, true);
            let mut sqs = Vec::with_capacity(batch.len());
            for &i in batch {
                let x = tape.leaf(xs[i].clone(), false);
                let pred = scratch.regressor.forward_tape(&mut tape, &vars, x);
                let err = tape.shift(pred, -ys[i]);
                sqs.push(tape.mul(err, err));
            }
            let loss = tape.mean(&sqs);
            let grads = tape.backward(loss);
            let flat: Vec<Vec<f64>> = vars
                .layers
                .iter()
                .flat_map(|&(w, b)| [grads.get(w).to_vec(), grads.get(b).to_vec()])
                .collect();
            Ok((tape.scalar(loss), flat))
        },
        |tensors| {
            let scratch = model.with_tensors(tensors);
            let mut acc = 0.0;
            for &i in &val_idx {
                let e = scratch.regressor.forward_scalar(&xs[i])? - ys[i];
                acc += e * e;
            }
            Ok(acc / val_idx.len() as f64)
        },
    )?;

    Ok((model.with_tensors(&tensors), log))
}

/// Trains the single-head LSTM baseline on [`baseline_lstm_loss`].
pub fn train_baseline_lstm(train: &Dataset, cfg: &TrainConfig) -> Result<(BaselineLstmModel, TrainLog)> {
    let (stats, items) = baseline_items(train, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT));
    let model = BaselineLstmModel {
        encoder: LstmParams::init(FEATURE_DIM, cfg.hidden_dim, &mut rng),
        head: MlpParams::init(&cfg.head_dims(), &mut rng),
        norm_stats: stats,
        config: cfg.clone(),
    };

    let (train_idx, val_idx) = split_train_val(items.len(), cfg.seed);
    let names = model.tensor_names();
    let spec = LoopSpec { cfg, trainable: vec![true; names.len()], names, start_batch: 0 };

    let (tensors, log) = spec.run(
        model.to_tensors(),
        &train_idx,
        !val_idx.is_empty(),
        |tensors, batch, _| {
            let scratch = model.with_tensors(tensors);
            let refs: Vec<&RatedSeq> = batch.iter().map(|&i| &items[i]).collect();
            let (tape, loss, flat) = lstm_loss_vars(&scratch, &refs)?;
            let grads = tape.backward(loss);
            let flat = flat.iter().map(|&v| grads.get(v).to_vec()).collect();
            Ok((tape.scalar(loss), flat))
        },
        |tensors| {
            let scratch = model.with_tensors(tensors);
            let mut acc = 0.0;
            for &i in &val_idx {
                let item = &items[i];
                let phi = scratch.phi_normed(&item.turns)?;
                let e = scratch.head.forward_scalar(&phi)? - item.rating;
                acc += e * e;
            }
            Ok(acc / val_idx.len() as f64)
        },
    )?;

    Ok((model.with_tensors(&tensors), log))
}
