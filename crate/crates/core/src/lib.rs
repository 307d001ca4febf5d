//! Hierarchical conditional permutation importance over a Ward dendrogram
//! of the features, with cross-fitted t-tests, hierarchical p-value
//! adjustment and importance-conserving corrections.

pub mod bench;
pub mod cluster;
pub mod conservation;
pub mod cpi;
pub mod data;
pub mod error;
pub mod export;
pub mod fixtures;
pub mod inference;
pub mod learners;
pub mod report;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};
