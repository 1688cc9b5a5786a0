//! Detection of spatially contiguous, densely altered sub-area pairs in a
//! bipartite voxel-pair connectivity graph.

pub mod baselines;
pub mod bench;
pub mod config;
pub mod error;
pub mod inference;
pub mod intra;
pub mod io;
pub mod lambda;
pub mod mdl;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod simulation;
pub mod spatial;
pub mod stats;

pub use error::{Result, SccnError};
