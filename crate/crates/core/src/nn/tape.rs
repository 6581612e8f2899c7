//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! A [`Tape`] records one forward pass as a flat list of nodes; [`Tape::backward`]
//! walks it once in exact reverse order, accumulating gradients. Nodes hold
//! whole vectors (a scalar is a length-1 vector), which keeps the graph small:
//! an LSTM timestep is ~16 nodes instead of hundreds of scalar ones.
//!
//! Gradients only flow into nodes marked `needs_grad` (parameters and
//! anything computed from them), so constant inputs cost no gradient buffers.
//! Shape mismatches are programming errors and panic with a message; data
//! problems (NaN inputs, empty batches) are caught by the public model APIs
//! before anything reaches the tape.

use super::tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// Elementwise a + b.
    Add(Var, Var),
    /// Elementwise a − b.
    Sub(Var, Var),
    /// Elementwise a ⊙ b.
    Mul(Var, Var),
    /// k · a for a constant k.
    Scale(Var, f64),
    /// a + k elementwise for a constant k.
    Shift(Var),
    /// W·x where `w` holds a rows×cols matrix flattened row-major.
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    /// Contiguous sub-vector of `src` starting at `start`.
    Slice { src: Var, start: usize },
    /// Elementwise sum of same-length vectors.
    Sum(Vec<Var>),
    /// Sum of all elements → scalar.
    SumElems(Var),
    /// A scalar with an arbitrary frozen local Jacobian: `grads[i]` is
    /// ∂out/∂inputs[i], computed by the caller during the forward pass.
    /// Used for operations (like Wasserstein distances) whose subgradient is
    /// cheapest to extract while computing the value itself.
    CustomScalar { inputs: Vec<Var>, grads: Vec<Vec<f64>> },
}

struct Node {
    value: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

/// One recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of a scalar loss with respect to every reachable `needs_grad`
/// node, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient for `v`; empty slice if no gradient flowed there.
    pub fn get(&self, v: Var) -> &[f64] {
        self.grads.get(v.0).map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a length-{} node", val.len());
        val[0]
    }

    fn push(&mut self, value: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Vec<f64>, needs_grad: bool) -> Var {
        self.push(value, needs_grad, Op::Leaf)
    }

    fn binary_value(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "elementwise op on lengths {} and {}", va.len(), vb.len());
        va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary_value(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, ng, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary_value(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, ng, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary_value(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, ng, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).iter().map(|&x| k * x).collect();
        let ng = self.needs(a);
        self.push(v, ng, Op::Scale(a, k))
    }

    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).iter().map(|&x| x + k).collect();
        let ng = self.needs(a);
        self.push(v, ng, Op::Shift(a))
    }

    /// W·x; `w` must hold exactly rows·cols elements, `x` exactly cols.
    pub fn matvec(&mut self, w: Var, rows: usize, cols: usize, x: Var) -> Var {
        let v = tensor::matvec(self.value(w), rows, cols, self.value(x));
        let ng = self.needs(w) || self.needs(x);
        self.push(v, ng, Op::MatVec { w, x, rows, cols })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let ng = self.needs(a);
        self.push(v, ng, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| x.tanh()).collect();
        let ng = self.needs(a);
        self.push(v, ng, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let ng = self.needs(a);
        self.push(v, ng, Op::Relu(a))
    }

    pub fn slice(&mut self, src: Var, range: std::ops::Range<usize>) -> Var {
        let v = self.value(src)[range.clone()].to_vec();
        let ng = self.needs(src);
        self.push(v, ng, Op::Slice { src, start: range.start })
    }

    /// Elementwise sum of one or more same-length vectors.
    pub fn sum(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "sum of zero vars");
        let mut v = self.value(vars[0]).to_vec();
        for &x in &vars[1..] {
            let vx = self.value(x);
            assert_eq!(vx.len(), v.len(), "sum over mixed lengths {} and {}", vx.len(), v.len());
            for (acc, &e) in v.iter_mut().zip(vx) {
                *acc += e;
            }
        }
        let ng = vars.iter().any(|&x| self.needs(x));
        self.push(v, ng, Op::Sum(vars.to_vec()))
    }

    /// Elementwise mean of one or more same-length vectors.
    pub fn mean(&mut self, vars: &[Var]) -> Var {
        let s = self.sum(vars);
        self.scale(s, 1.0 / vars.len() as f64)
    }

    /// Sum of all elements of `a`, as a scalar node.
    pub fn sum_elems(&mut self, a: Var) -> Var {
        let v = vec![self.value(a).iter().sum()];
        let ng = self.needs(a);
        self.push(v, ng, Op::SumElems(a))
    }

    /// Records a scalar whose local Jacobian the caller computed during its
    /// own forward pass: `grads[i]` must be ∂value/∂inputs[i] and match each
    /// input's length.
    pub fn custom_scalar(&mut self, inputs: Vec<Var>, value: f64, grads: Vec<Vec<f64>>) -> Var {
        assert_eq!(inputs.len(), grads.len(), "custom_scalar inputs/grads length mismatch");
        for (v, g) in inputs.iter().zip(&grads) {
            assert_eq!(
                self.value(*v).len(),
                g.len(),
                "custom_scalar gradient length mismatch on one input"
            );
        }
        let ng = inputs.iter().any(|&x| self.needs(x));
        self.push(vec![value], ng, Op::CustomScalar { inputs, grads })
    }

    /// Reverse pass from a scalar `loss` node. Panics if `loss` is not
    /// scalar. Returns per-node gradients; nodes the loss does not depend on
    /// (or that don't need gradients) report an empty slice.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar node");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        if !self.needs(loss) {
            return Gradients { grads };
        }
        grads[loss.0] = vec![1.0];

        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            // Take the node's gradient out to satisfy the borrow checker while
            // accumulating into (distinct, earlier) input slots.
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, |k| g[k]);
                    self.accumulate(&mut grads, *b, |k| g[k]);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, |k| g[k]);
                    self.accumulate(&mut grads, *b, |k| -g[k]);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    self.accumulate(&mut grads, *a, |k| g[k] * vb[k]);
                    self.accumulate(&mut grads, *b, |k| g[k] * va[k]);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    self.accumulate(&mut grads, *a, |j| g[j] * k);
                }
                Op::Shift(a) => {
                    self.accumulate(&mut grads, *a, |j| g[j]);
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    let vw = &self.nodes[w.0].value;
                    let vx = &self.nodes[x.0].value;
                    if self.needs(*w) {
                        let gw = Self::slot(&mut grads, *w, rows * cols);
                        for r in 0..rows {
                            let gr = g[r];
                            let row = &mut gw[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                row[c] += gr * vx[c];
                            }
                        }
                    }
                    if self.needs(*x) {
                        let gx = Self::slot(&mut grads, *x, cols);
                        for r in 0..rows {
                            let gr = g[r];
                            let row = &vw[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                gx[c] += gr * row[c];
                            }
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    self.accumulate(&mut grads, *a, |k| g[k] * y[k] * (1.0 - y[k]));
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    self.accumulate(&mut grads, *a, |k| g[k] * (1.0 - y[k] * y[k]));
                }
                Op::Relu(a) => {
                    let y = &self.nodes[i].value;
                    self.accumulate(&mut grads, *a, |k| if y[k] > 0.0 { g[k] } else { 0.0 });
                }
                Op::Slice { src, start } => {
                    if self.needs(*src) {
                        let start = *start;
                        let gs = Self::slot(&mut grads, *src, self.nodes[src.0].value.len());
                        for (k, &gk) in g.iter().enumerate() {
                            gs[start + k] += gk;
                        }
                    }
                }
                Op::Sum(vars) => {
                    for &a in vars {
                        self.accumulate(&mut grads, a, |k| g[k]);
                    }
                }
                Op::SumElems(a) => {
                    let g0 = g[0];
                    self.accumulate(&mut grads, *a, |_| g0);
                }
                Op::CustomScalar { inputs, grads: local } => {
                    let g0 = g[0];
                    for (&a, la) in inputs.iter().zip(local) {
                        self.accumulate(&mut grads, a, |k| g0 * la[k]);
                    }
                }
            }
            grads[i] = g;
        }
        Gradients { grads }
    }

    fn slot<'g>(grads: &'g mut [Vec<f64>], v: Var, len: usize) -> &'g mut Vec<f64> {
        if grads[v.0].is_empty() {
            grads[v.0] = vec![0.0; len];
        }
        &mut grads[v.0]
    }

    /// Adds `f(k)` to each component k of `v`'s gradient, if `v` needs one.
    fn accumulate(&self, grads: &mut [Vec<f64>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.needs(v) {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let gv = Self::slot(grads, v, len);
        for k in 0..len {
            gv[k] += f(k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Loss = Σ pᵢ → gradient is all ones.
    #[test]
    fn sum_of_params_grads_are_one() {
        let mut t = Tape::new();
        let p = t.leaf(vec![1.0, -2.0, 3.5], true);
        let loss = t.sum_elems(p);
        let g = t.backward(loss);
        assert_eq!(g.get(p), &[1.0, 1.0, 1.0]);
    }

    /// Loss = ‖p‖²/2 → gradient is p itself.
    #[test]
    fn half_square_norm_grad_is_p() {
        let mut t = Tape::new();
        let p = t.leaf(vec![1.0, -2.0, 3.5], true);
        let sq = t.mul(p, p);
        let s = t.sum_elems(sq);
        let loss = t.scale(s, 0.5);
        let g = t.backward(loss);
        assert_eq!(g.get(p), &[1.0, -2.0, 3.5]);
        assert_eq!(t.scalar(loss), 0.5 * (1.0 + 4.0 + 12.25));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let p = t.leaf(vec![2.0], true);
        let c = t.leaf(vec![3.0], false);
        let y = t.mul(p, c);
        let g = t.backward(y);
        assert_eq!(g.get(p), &[3.0]);
        assert!(g.get(c).is_empty());
    }

    #[test]
    fn matvec_grads_match_hand_derivation() {
        // y = W·x, loss = Σy. dL/dW[r,c] = x[c]; dL/dx[c] = Σ_r W[r,c].
        let mut t = Tape::new();
        let w = t.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true); // 3x2
        let x = t.leaf(vec![10.0, -1.0], true);
        let y = t.matvec(w, 3, 2, x);
        assert_eq!(t.value(y), &[8.0, 26.0, 44.0]);
        let loss = t.sum_elems(y);
        let g = t.backward(loss);
        assert_eq!(g.get(w), &[10.0, -1.0, 10.0, -1.0, 10.0, -1.0]);
        assert_eq!(g.get(x), &[1.0 + 3.0 + 5.0, 2.0 + 4.0 + 6.0]);
    }

    #[test]
    fn slice_routes_gradient_into_the_window() {
        let mut t = Tape::new();
        let p = t.leaf(vec![1.0, 2.0, 3.0, 4.0], true);
        let s = t.slice(p, 1..3);
        let loss = t.sum_elems(s);
        let g = t.backward(loss);
        assert_eq!(g.get(p), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(p) + sum(p·p) → grad = 1 + 2p.
        let mut t = Tape::new();
        let p = t.leaf(vec![3.0, -1.0], true);
        let s1 = t.sum_elems(p);
        let sq = t.mul(p, p);
        let s2 = t.sum_elems(sq);
        let loss = t.add(s1, s2);
        let g = t.backward(loss);
        assert_eq!(g.get(p), &[7.0, -1.0]);
    }

    #[test]
    fn activations_match_finite_differences() {
        let xs = vec![-1.5, -0.3, 0.2, 2.0];
        let eps = 1e-6;
        for op in 0..3usize {
            let run = |vals: Vec<f64>| -> (f64, Vec<f64>) {
                let mut t = Tape::new();
                let p = t.leaf(vals, true);
                let y = match op {
                    0 => t.sigmoid(p),
                    1 => t.tanh(p),
                    _ => t.relu(p),
                };
                let sq = t.mul(y, y);
                let loss = t.sum_elems(sq);
                let g = t.backward(loss);
                (t.scalar(loss), g.get(p).to_vec())
            };
            let (_, analytic) = run(xs.clone());
            for k in 0..xs.len() {
                let mut up = xs.clone();
                up[k] += eps;
                let mut dn = xs.clone();
                dn[k] -= eps;
                let fd = (run(up).0 - run(dn).0) / (2.0 * eps);
                assert!(
                    (analytic[k] - fd).abs() < 1e-6,
                    "op {op} dim {k}: analytic {} vs fd {fd}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn custom_scalar_uses_frozen_jacobian() {
        // value 7 with ∂/∂p = (2, −3); loss = 5·value.
        let mut t = Tape::new();
        let p = t.leaf(vec![1.0, 1.0], true);
        let c = t.custom_scalar(vec![p], 7.0, vec![vec![2.0, -3.0]]);
        let loss = t.scale(c, 5.0);
        let g = t.backward(loss);
        assert_eq!(t.scalar(loss), 35.0);
        assert_eq!(g.get(p), &[10.0, -15.0]);
    }

    #[test]
    #[should_panic(expected = "non-scalar")]
    fn backward_rejects_vector_loss() {
        let mut t = Tape::new();
        let p = t.leaf(vec![1.0, 2.0], true);
        let y = t.scale(p, 2.0);
        let _ = t.backward(y);
    }
}
