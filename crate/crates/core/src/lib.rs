//! Standard and factorized neural transducers on a small reverse-mode
//! autodiff engine, with exact lattice loss, decoding, text-only adaptation
//! of the factorized model's vocabulary predictor, and a synthetic
//! two-domain task to exercise it all.

pub mod cli;
pub mod data;
pub mod decode;
pub mod error;
pub mod lattice;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
