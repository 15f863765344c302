//! Latency outlier detection and root-cause analysis over per-request
//! waiting-dependency graphs.
//!
//! The pipeline: load (or synthesize) DepGraphs, prune weak edges, embed
//! each graph with WL subtree features and skip-gram training, flag
//! latency outliers with density and statistical detectors, then merge the
//! normal cluster and diff each outlier against it to surface the paths
//! that explain the slowdown.

pub mod depgraph;
pub mod detection;
pub mod dot;
pub mod embedding;
pub mod error;
pub mod generator;
pub mod pipeline;
pub mod rootcause;

pub use error::{Error, Result};
