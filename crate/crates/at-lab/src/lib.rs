//! A self-contained adversarial-training laboratory: PGD adversarial
//! training, TRADES, and mean-teacher consistency regularization on
//! small MLP classifiers, with a from-scratch reverse-mode autodiff
//! tape, deterministic seeded experiments, and diagnostics for robust
//! overfitting (robust generalization gap, per-term gradient norms,
//! filter-normalized weight loss landscapes).
//!
//! See the `examples/` directory for runnable entry points covering each
//! capability, or the `at-lab` binary for the `train`/`eval`/`landscape`
//! command-line surface.

pub mod attacks;
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod models;
pub mod objectives;
pub mod seeds;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
