//! Multispectral iris presentation attack detection.
//!
//! Each NIR band gets its own transformer head with a learnable band
//! embedding, CLS plus mean-patch token fusion, size-adaptive dropout and
//! feature normalization. Bands are trained independently with a
//! class-balanced cross-entropy plus a pairwise contrastive term and combined
//! at inference by development-accuracy weighted, mask-aware probability
//! fusion. Evaluation follows ISO/IEC 30107-3 under a cross-artefact protocol.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod ensemble;
pub mod error;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod separability;

pub use error::{Error, Result};
