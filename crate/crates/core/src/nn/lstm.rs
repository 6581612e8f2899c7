//! A single-layer LSTM with backpropagation through time via the tape.
//!
//! Gate layout along the 4H axis is input, forget, candidate, output
//! (i, f, g, o). Weights are packed as two matrices — input→gates [4H, D]
//! and hidden→gates [4H, H] — plus one bias vector [4H]. The recurrence is
//! the standard one:
//!
//! ```text
//! (i, f, g, o) = (σ, σ, tanh, σ)(W_ih·x_t + W_hh·h_{t−1} + b)
//! c_t = f ⊙ c_{t−1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! Initial state is zero. The plain and taped forward passes share the same
//! matvec kernel and evaluation order, so their hidden states agree
//! bit-for-bit — inference through the cheap path is exactly the function
//! training differentiated.

use super::tape::{Tape, Var};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Parameters of one LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Input→gate weights, shape [4H, D].
    pub w_ih: Tensor,
    /// Hidden→gate weights, shape [4H, H].
    pub w_hh: Tensor,
    /// Gate biases, shape [4H].
    pub b: Tensor,
}

/// Tape handles for one registered set of LSTM parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl LstmParams {
    /// Zero-initialized parameters (useful as a fixed point: all-zero
    /// parameters map any input sequence to the zero hidden state).
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            w_ih: Tensor::zeros(vec![4 * hidden_dim, input_dim]),
            w_hh: Tensor::zeros(vec![4 * hidden_dim, hidden_dim]),
            b: Tensor::zeros(vec![4 * hidden_dim]),
        }
    }

    /// Seeded uniform(−1/√fan_in, +1/√fan_in) weight init with zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        super::fill_uniform(p.w_ih.data_mut(), input_dim, rng);
        super::fill_uniform(p.w_hh.data_mut(), hidden_dim, rng);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        if self.w_ih.shape() != [4 * h, d] || self.w_hh.shape() != [4 * h, h] || self.b.shape() != [4 * h] {
            return Err(Error::shape(format!(
                "LSTM parameter shapes {:?}/{:?}/{:?} inconsistent with D={d}, H={h}",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.b.shape()
            )));
        }
        if !(self.w_ih.is_finite() && self.w_hh.is_finite() && self.b.is_finite()) {
            return Err(Error::NonFinite("LSTM parameters".into()));
        }
        Ok(())
    }

    fn check_seq<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::validation("LSTM input sequence is empty"));
        }
        for (t, x) in seq.iter().enumerate() {
            let x = x.as_ref();
            if x.len() != self.input_dim {
                return Err(Error::shape(format!(
                    "sequence step {t} has {} features, LSTM expects {}",
                    x.len(),
                    self.input_dim
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("LSTM input at step {t}")));
            }
        }
        Ok(())
    }

    /// Runs the recurrence without recording gradients. Returns every hidden
    /// state and (redundantly, for convenience) the final one.
    pub fn forward<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        self.validate()?;
        self.check_seq(seq)?;
        let h = self.hidden_dim;
        let mut hidden = vec![0.0; h];
        let mut cell = vec![0.0; h];
        let mut pre_i = vec![0.0; 4 * h];
        let mut pre_h = vec![0.0; 4 * h];
        let mut out = Vec::with_capacity(seq.len());

        for x in seq {
            tensor::matvec_into(self.w_ih.data(), 4 * h, self.input_dim, x.as_ref(), &mut pre_i);
            tensor::matvec_into(self.w_hh.data(), 4 * h, h, &hidden, &mut pre_h);
            let b = self.b.data();
            let mut new_h = vec![0.0; h];
            for k in 0..h {
                // Mirror the tape exactly: (W_ih·x + W_hh·h) + b, then gates.
                let zi = (pre_i[k] + pre_h[k]) + b[k];
                let zf = (pre_i[h + k] + pre_h[h + k]) + b[h + k];
                let zg = (pre_i[2 * h + k] + pre_h[2 * h + k]) + b[2 * h + k];
                let zo = (pre_i[3 * h + k] + pre_h[3 * h + k]) + b[3 * h + k];
                let gi = 1.0 / (1.0 + (-zi).exp());
                let gf = 1.0 / (1.0 + (-zf).exp());
                let gg = zg.tanh();
                let go = 1.0 / (1.0 + (-zo).exp());
                cell[k] = gf * cell[k] + gi * gg;
                new_h[k] = go * cell[k].tanh();
            }
            hidden = new_h;
            out.push(hidden.clone());
        }
        let last = hidden;
        Ok((out, last))
    }

    /// Registers the parameters on a tape as gradient leaves (or constants
    /// when `needs_grad` is false, e.g. frozen during transfer learning).
    pub fn register(&self, tape: &mut Tape, needs_grad: bool) -> LstmVars {
        LstmVars {
            w_ih: tape.leaf(self.w_ih.data().to_vec(), needs_grad),
            w_hh: tape.leaf(self.w_hh.data().to_vec(), needs_grad),
            b: tape.leaf(self.b.data().to_vec(), needs_grad),
        }
    }

    /// Records the recurrence on `tape`, returning one hidden-state node per
    /// timestep. Inputs enter as constants. Callers must validate the
    /// sequence beforehand (this is the hot path of training loops whose
    /// public entry points already did).
    pub fn forward_tape<S: AsRef<[f64]>>(&self, tape: &mut Tape, vars: &LstmVars, seq: &[S]) -> Vec<Var> {
        let h = self.hidden_dim;
        let mut hidden = tape.leaf(vec![0.0; h], false);
        let mut cell = tape.leaf(vec![0.0; h], false);
        let mut out = Vec::with_capacity(seq.len());

        for x in seq {
            let xv = tape.leaf(x.as_ref().to_vec(), false);
            let pre_i = tape.matvec(vars.w_ih, 4 * h, self.input_dim, xv);
            let pre_h = tape.matvec(vars.w_hh, 4 * h, h, hidden);
            let s = tape.add(pre_i, pre_h);
            let pre = tape.add(s, vars.b);

            let zi = tape.slice(pre, 0..h);
            let zf = tape.slice(pre, h..2 * h);
            let zg = tape.slice(pre, 2 * h..3 * h);
            let zo = tape.slice(pre, 3 * h..4 * h);
            let gi = tape.sigmoid(zi);
            let gf = tape.sigmoid(zf);
            let gg = tape.tanh(zg);
            let go = tape.sigmoid(zo);

            let keep = tape.mul(gf, cell);
            let write = tape.mul(gi, gg);
            cell = tape.add(keep, write);
            let ct = tape.tanh(cell);
            hidden = tape.mul(go, ct);
            out.push(hidden);
        }
        out
    }
}
