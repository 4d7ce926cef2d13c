//! Two-timescale optimization of antenna positions and transmit covariances for
//! movable-antenna multiuser MIMO downlink.
//!
//! Short-term receive positions are optimized per channel sample
//! ([`short_term`]); transmit positions and covariances are optimized on channel
//! statistics by recursive quadratic surrogates ([`surrogate`],
//! [`convex_solver`], [`two_timescale`]). [`sim`] runs Monte Carlo experiments.

pub mod channel;
pub mod error;
pub mod linalg;
pub mod rate;
pub mod short_term;
pub mod surrogate;
pub mod convex_solver;
pub mod config;
pub mod two_timescale;
pub mod sim;
pub mod checks;

pub use error::{Error, Result};
