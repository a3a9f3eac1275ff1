//! Simulation and verification toolkit for coalescing random walk, its
//! voter-model dual, and non-backtracking coalescing walks on rooted trees.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bounds;
pub mod crw;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod graph;
pub mod nb_tree;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod voter;

pub use error::{Error, Result};
pub use graph::{make_graph, ExposureStats, GraphOracle, GraphSpec, OffspringDistribution, VertexId};
pub use stats::{EstimateRow, EstimateSeries};
