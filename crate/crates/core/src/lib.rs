//! Entanglement-based key distribution with a spatial wavefunction factor.

pub mod commands;
pub mod config;
pub mod error;
pub mod lhv;
pub mod lp;
pub mod protocol;
pub mod quadrature;
pub mod report;
pub mod spatial;
pub mod spin;

pub use error::{Error, Result};
