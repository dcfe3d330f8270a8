//! Confidence calibration for fixed classifiers.
//!
//! The headline method is neural clamping: a universal additive input
//! perturbation fitted jointly with an output temperature by minimizing a
//! focal-loss objective with weight decay on a calibration set. Around it the
//! crate provides the standard post-hoc baselines (NLL- and grid-fitted
//! temperature scaling, vector/matrix scaling, ODIR-regularized matrix and
//! Dirichlet calibration), binned calibration metrics (ECE, SCE, ACE) plus
//! NLL, entropy, and accuracy, a minimal dense network with exact
//! reverse-mode gradients, and numerical verifiers for the two theoretical
//! claims behind the method.
//!
//! Everything is deterministic given explicit seeds; nothing reads entropy
//! from the environment. See the `book/` directory for a guided tour; the
//! chapters' code blocks run as doc-tests.

pub mod calibrators;
pub mod clamping;
pub mod data;
pub mod error;
pub mod files;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod theory;

pub mod cli;

mod book;

pub use error::{Error, Result};
pub use tensor::Tensor;
