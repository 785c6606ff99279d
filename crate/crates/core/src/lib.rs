//! Simulation and verification core for impulsive Caputo-fractional stochastic
//! delay equations driven by Q-Wiener and Q-fractional Brownian noise.

pub mod control;
pub mod error;
pub mod mittag_leffler;
pub mod noise;
pub mod phase_space;
pub mod scenario;
pub mod seed;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
