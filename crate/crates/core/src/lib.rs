//! Domain-generalization training and evaluation for multi-channel 1D biosignals.

pub mod autodiff;
pub mod datasets;
pub mod dg;
pub mod error;
pub mod eval;
pub mod models;
pub mod seeds;

pub use error::{Error, ErrorKind, Result};
