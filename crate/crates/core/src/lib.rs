//! Dense autoencoder with a learned per-input routing layer.
//!
//! A network is split at a placement point. The prefix output is masked by a
//! sparse learned vector; a small switch network predicts how far a cheap
//! mirrored decoder would stray from the full suffix, and inputs below a
//! threshold take the cheap path.

pub mod autograd;
pub mod data;
pub mod dsl;
mod error;
pub mod eval;
pub mod nn;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
