//! Weakly-supervised multi-label corpus labeling.
//!
//! The pipeline subsets a document corpus by semantic similarity to category
//! definitions, assigns probabilistic hazard and NCF labels through multiple
//! embedding-based labeling functions combined by a generative label model,
//! generalizes with an ensemble of per-provider classifier chains, and
//! surfaces themes per category pair with cluster-based TF-IDF.

pub mod classify;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod filter;
pub mod pipeline;
pub mod rng;
pub mod topics;
pub mod weaklabel;

pub use error::{Error, Result};
