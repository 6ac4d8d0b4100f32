//! Fréchet bounds on classifier metrics from weak labels and a label model.
//!
//! Given examples `(X_i, Z_i)` with weak-label signatures `Z_i` and a
//! conditional table `P(Y | Z)`, the crate bounds `E[g(X, Y, Z)]` over every
//! joint distribution consistent with both, using a smoothed dual solved by
//! L-BFGS, with plug-in confidence intervals. An exact transport-based
//! oracle is provided for small instances.

pub mod bounds;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod oracle;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
