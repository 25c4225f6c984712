//! Numerics for constrained pinning models of renewal type.
//!
//! A model is a waiting-time distribution `p` on the positive integers, a
//! pinning potential `v`, and a reward function `f` on renewal increments.
//! The library classifies the model's thermodynamic regime, evaluates exact
//! finite-horizon probabilities under the constrained Gibbs measure by dynamic
//! programming, samples constrained paths with a renewal-bridge Monte Carlo
//! sampler, and checks the predicted polynomial decay of conditioned
//! half-space events against its closed-form limit constant.
//!
//! Numerical results that feed decisions (criticality, regime boundaries,
//! limit constants) are produced as certified brackets: intervals guaranteed
//! to contain the true value, with all tail mass enclosed analytically.

pub mod asympt;
pub mod bridge;
pub mod error;
pub mod exact;
pub mod fftconv;
pub mod model;
pub mod series;
pub mod thermo;

pub use error::{Error, Result};
pub use series::{Bracket, NeumaierSum, SeriesSum};
