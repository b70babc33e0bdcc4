//! Differentially private k-means clustering over a partitioned map/reduce data flow.
//!
//! The pipeline mirrors a Hadoop-style deployment without needing one: map tasks
//! compute exact per-partition cluster aggregates, a coordinator merges them in
//! partition order, and reduce tasks perturb each cluster's count and coordinate
//! sums with Laplace noise before releasing new centroids.
//!
//! Modules:
//! - [`model`]: shared domain types and distance primitives
//! - [`mechanism`]: Laplace sampling, sensitivity, budget ledger
//! - [`planner`]: closed-form minimal per-iteration budget and iteration count
//! - [`canopy`]: canopy-based private selection of initial centroids
//! - [`engine`]: partitioned Lloyd iterations and the DP variants
//! - [`evaluation`]: NICV, seeded comparison sweeps, timing sweeps
//! - [`ingest`]: CSV loading, min-max normalization, dataset adapters
//! - [`cli`]: command-line front end

pub mod canopy;
pub mod cli;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod mechanism;
pub mod model;
pub mod planner;

pub use error::{Error, Result};
