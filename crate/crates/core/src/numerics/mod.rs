//! Shared numeric kernel: tensors, reverse-mode autodiff, seeded RNG
//! streams, and gradient verification.

pub mod gradcheck;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use rng::{derive_seed, rng_from, stream};
pub use tape::{Tape, TensorId};
pub use tensor::{logsumexp, Tensor};

/// Numerically stable softmax of a flat slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    tensor::softmax_into(xs, &mut out);
    out
}
