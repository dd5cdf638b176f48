//! Hypernetwork-based search over frozen-encoder pairs: one hypernetwork is
//! trained to generate connector parameters for every (image, text) encoder
//! combination, and its pair ranking is compared against grid search and
//! cheaper baselines under a shared FLOPs ledger.

pub mod cli;
pub mod connectors;
pub mod error;
pub mod hypernet;
pub mod embeddings;
pub mod metrics;
pub mod numerics;
pub mod objectives;
pub mod rng;
pub mod search;
pub mod trainer;

pub use error::{Error, Result};
