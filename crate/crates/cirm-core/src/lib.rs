//! Continual invariant risk minimization.
//!
//! Training objectives that stay optimal across data environments presented
//! either jointly or one at a time: ERM and IRM baselines, the bilevel
//! KKT reformulation solved with consensus ADMM, mean-field variational
//! extensions with KL anchoring to the previous posterior, environment
//! generators with controlled spurious correlation, and the numerical
//! oracles (finite differences, information projection, conjugate Bayes,
//! least squares) that every analytic formula is checked against.

pub mod admm;
pub mod envgen;
pub mod harness;
pub mod methods;
pub mod net;
pub mod oracle;
pub mod tape;
pub mod tensor;
pub mod util;
pub mod variational;

pub use tensor::{Tensor, TensorError};
