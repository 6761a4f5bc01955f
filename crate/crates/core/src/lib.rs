//! Dissipaton equation of motion (DEOM) and its dissipaton quantum master
//! equation (DQME) phase-space companion for hybrid system–bath statistics.

pub mod bathcorr;
pub mod error;
pub mod field;
pub mod harness;
pub mod hierarchy;
pub mod moments;
pub mod propagator;
pub mod quadrature;

pub use error::{Error, Result};
