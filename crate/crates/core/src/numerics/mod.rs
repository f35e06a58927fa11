//! Dense arrays, reverse-mode differentiation and the SGD optimizer.

mod array;
pub mod gradcheck;
mod params;
mod sgd;
mod tape;

pub use array::{log_sum_exp, sigmoid, softmax, Array};
pub use params::{Param, ParamId, ParamSet};
pub use sgd::{sgd_update, SgdStep};
pub use tape::{CustomOp, Gradients, Tape, Var};

pub(crate) use array::{matmul_into, matmul_nt_into, matmul_tn_into};

use rand::{Rng, RngCore};

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(rng: &mut dyn RngCore, n: usize, rate: f64) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests;
