//! Feynman–Kac Monte Carlo for moments of the parabolic Anderson model
//! ∂u/∂t = ½Δu + uẆ and of its iterated Malliavin derivatives, together with
//! deterministic oracles (Wiener chaos series, finite-difference SPDE
//! simulation) used to cross-check the path-integral estimators.

pub mod bridges;
pub mod chaos;
pub mod cli;
pub mod config;
pub mod covariance;
pub mod error;
pub mod functionals;
pub mod kernels;
pub mod moments;
pub mod quad;
pub mod rng;
pub mod spde;
pub mod stats;

pub use error::{Error, Result};
