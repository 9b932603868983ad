//! Transferability estimation from precomputed feature embeddings.
//!
//! The central score is JC-NCE: couple source and target samples by optimal
//! transport under a ground cost that mixes feature distance with a
//! label-to-label Wasserstein distance, then take the negative conditional
//! entropy of target labels given source labels under that coupling.

pub mod data;
pub mod error;
pub mod harness;
pub mod label;
pub mod metrics;
pub mod ot;

pub use error::{Error, ErrorKind, Result};
