//! Excitation-energy transfer through a ring antenna with a central trap,
//! under a secular Lindblad master equation whose dephasing rates are
//! spatially correlated through a distance-dependent kernel.

pub mod bath;
pub mod bessel;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod lindblad;
pub mod model;
pub mod output;
pub mod units;

pub use error::{Error, Result};
