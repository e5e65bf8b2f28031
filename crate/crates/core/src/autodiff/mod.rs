//! Scalar differentiation engine.
//!
//! Two layers cooperate here. [`Jet`] carries a value together with its exact
//! gradient and Hessian with respect to the network's spatiotemporal inputs
//! (forward propagation, cheap because there are at most three inputs).
//! [`Tape`] records every scalar operation applied to jet components so a
//! single reverse sweep yields the gradient of a loss with respect to all
//! trainable parameters.
//!
//! Code that should run both on plain `f64` values and on recorded tape
//! variables is written once against the [`Arith`] trait.

mod arith;
mod jet;
mod tape;

pub use arith::{Arith, Values};
pub use jet::{hess_index, hess_len, jet_add, jet_mul, jet_scale, jet_seed, jet_tanh, Jet, Jet2, JetVar};
pub use tape::{Tape, TapeBlock, Var};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("unsupported input dimension {0}, expected 2 or 3")]
    UnsupportedDim(usize),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("variable index {index} out of range for tape of length {len}")]
    VarOutOfRange { index: usize, len: usize },
    #[error("parameter index {index} out of range for {count} parameters")]
    ParamOutOfRange { index: usize, count: usize },
}

/// Fixed-order pairwise reduction of `(value, gradient)` partials.
///
/// The combination tree depends only on the number of partials, never on how
/// they were produced, so results are bitwise reproducible regardless of how
/// many workers evaluated them.
pub fn pairwise_reduce(mut parts: Vec<(f64, Vec<f64>)>, n_params: usize) -> (f64, Vec<f64>) {
    if parts.is_empty() {
        return (0.0, vec![0.0; n_params]);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((va, mut ga)) = it.next() {
            match it.next() {
                Some((vb, gb)) => {
                    for (a, b) in ga.iter_mut().zip(&gb) {
                        *a += *b;
                    }
                    next.push((va + vb, ga));
                }
                None => next.push((va, ga)),
            }
        }
        parts = next;
    }
    parts.pop().unwrap()
}
