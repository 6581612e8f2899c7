//! Multi-layer perceptrons: affine layers with a per-layer activation tag.
//!
//! Used both as the regression heads on top of the LSTM representation and
//! as the dialogue-level baseline regressor. The final layer of a regression
//! head is linear; hidden layers use ReLU.

use super::tape::{Tape, Var};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    /// Weights, shape [out_dim, in_dim].
    pub w: Tensor,
    /// Bias, shape [out_dim].
    pub b: Tensor,
    pub activation: Activation,
}

/// A stack of affine layers. Consecutive dimensions must chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<MlpLayer>,
}

/// Tape handles for one registered MLP: (weights, bias) per layer.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpParams {
    /// A regression stack over `dims = [in, hidden…, out]`: ReLU on hidden
    /// layers, linear output. Weights uniform(±1/√fan_in), biases zero.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let mut w = Tensor::zeros(vec![fan_out, fan_in]);
            super::fill_uniform(w.data_mut(), fan_in, rng);
            layers.push(MlpLayer {
                w,
                b: Tensor::zeros(vec![fan_out]),
                activation: if i + 1 < dims.len() - 1 { Activation::Relu } else { Activation::Linear },
            });
        }
        MlpParams { layers }
    }

    /// Zero weights and biases with the same layer structure as [`init`].
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = (0..dims.len() - 1)
            .map(|i| MlpLayer {
                w: Tensor::zeros(vec![dims[i + 1], dims[i]]),
                b: Tensor::zeros(vec![dims[i + 1]]),
                activation: if i + 1 < dims.len() - 1 { Activation::Relu } else { Activation::Linear },
            })
            .collect();
        MlpParams { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.w.cols()).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.rows()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("MLP has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.b.shape() != [l.w.rows()] {
                return Err(Error::shape(format!(
                    "layer {i}: bias shape {:?} does not match {} outputs",
                    l.b.shape(),
                    l.w.rows()
                )));
            }
            if !(l.w.is_finite() && l.b.is_finite()) {
                return Err(Error::NonFinite(format!("MLP layer {i} parameters")));
            }
            if i > 0 && l.w.cols() != self.layers[i - 1].w.rows() {
                return Err(Error::shape(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.w.cols(),
                    i - 1,
                    self.layers[i - 1].w.rows()
                )));
            }
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "MLP input has {} features, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MLP input".into()));
        }
        let mut a = x.to_vec();
        for l in &self.layers {
            let mut z = tensor::matvec(l.w.data(), l.w.rows(), l.w.cols(), &a);
            for (zk, bk) in z.iter_mut().zip(l.b.data()) {
                *zk += bk;
            }
            if l.activation == Activation::Relu {
                for zk in &mut z {
                    *zk = zk.max(0.0);
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Scalar output of a single-output regression stack.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64> {
        let out = self.forward(x)?;
        if out.len() != 1 {
            return Err(Error::shape(format!("expected scalar head, got {} outputs", out.len())));
        }
        Ok(out[0])
    }

    pub fn register(&self, tape: &mut Tape, needs_grad: bool) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf(l.w.data().to_vec(), needs_grad),
                        tape.leaf(l.b.data().to_vec(), needs_grad),
                    )
                })
                .collect(),
        }
    }

    /// Records the forward pass on `tape` starting from node `x`.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Var {
        let mut a = x;
        for (l, (wv, bv)) in self.layers.iter().zip(&vars.layers) {
            let z = tape.matvec(*wv, l.w.rows(), l.w.cols(), a);
            let zb = tape.add(z, *bv);
            a = match l.activation {
                Activation::Relu => tape.relu(zb),
                Activation::Linear => zb,
            };
        }
        a
    }
}
