//! Spectral search for the bipartition maximizing the block-density objective.

pub mod eigen;
pub mod kmeans;
pub mod objective;
pub mod search;
pub mod sparse;

pub use objective::{objective_value, Support};
pub use search::{
    best_partition, best_partitions, ratio_cut_cluster, search_partition, Candidates, SearchGrid, SearchResult,
    SpectralConfig,
};
pub use sparse::{project_weights, SparseSym};
