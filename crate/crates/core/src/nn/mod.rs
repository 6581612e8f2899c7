//! Minimal deterministic neural engine: dense tensors, a reverse-mode tape,
//! an LSTM cell with backpropagation through time, MLP stacks, and Adam.
//!
//! Design constraints, in order: correctness (every gradient is
//! finite-difference checked), bit-level reproducibility (fixed seeds, fixed
//! reduction orders, no threads), and only then speed. Everything is `f64`.

mod adam;
mod lstm;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lstm::{LstmParams, LstmVars};
pub use mlp::{Activation, MlpLayer, MlpParams, MlpVars};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{dot, matvec, matvec_into, Tensor};

use rand::Rng;

/// Fills `data` with samples from uniform(−1/√fan_in, +1/√fan_in).
pub fn fill_uniform(data: &mut [f64], fan_in: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in data.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

/// Derives an independent seed for a named random stream from a root seed.
///
/// Every source of randomness in the crate (weight init, data splits, shuffle
/// order, projection directions, …) draws from its own stream so that adding
/// or reordering one consumer never perturbs the others. The mixer is the
/// splitmix64 finalizer, which decorrelates even adjacent stream ids.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
