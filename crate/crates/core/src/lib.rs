//! Learning polynomial feedback laws for finite-horizon optimal control.
//!
//! A value-function surrogate `v(t, y)` is a polynomial in scaled time and
//! state. Its gradient induces the feedback `u = -(1/beta) B^T grad v`, and
//! the coefficients are fitted by minimizing the closed-loop cost over sampled
//! initial conditions with a sparsity-promoting elastic-net penalty.

pub mod adjoint;
pub mod basis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod learn;
pub mod openloop;
pub mod problems;
pub mod report;

pub use error::{Error, Result};
