//! Reverse-mode automatic differentiation over dense matrices, a small
//! MLP, Adam, and a finite-difference gradient checker.
//!
//! A [`Tape`] records every op in evaluation order; `backward` walks it in
//! reverse. Gradients must be cleared with [`Tape::zero_grad`] before a
//! second backward pass on the same tape.

mod adam;
mod check;
mod matrix;
mod mlp;
mod suite;
mod tape;

pub use adam::Adam;
pub use check::{grad_check, GradCheck};
pub use matrix::Matrix;
pub use mlp::{Dense, Mlp, MlpVars};
pub use suite::{op_gradient_suite, OpReport};
pub use tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("backward root must be 1x1, got {shape:?}")]
    NonScalarRoot { shape: (usize, usize) },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward called twice without zero_grad")]
    BackwardWithoutReset,
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
}
