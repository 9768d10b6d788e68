//! Wong-Zakai and exponential Euler-Maruyama approximations of semilinear
//! SPDEs `dX = (AX + b̂(X)) dt + Σ_j σ_j(X) dB^j` on finite truncations, with
//! coupled Monte Carlo convergence studies.

pub mod catalog;
pub mod error;
pub mod hilbert;
pub mod hjmm;
pub mod model;
pub mod noise;
pub mod schemes;
pub mod semigroup;
pub mod stats;
pub mod study;

pub use error::{Error, Result};
