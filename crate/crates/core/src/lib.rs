//! Monotonic Relative Neighborhood Graphs for nearest neighbor search.
//!
//! The crate builds exact and degree- or pool-bounded MRNGs, searches them
//! (greedy descent, budgeted best-first, and conflict-set escape from local
//! minima), and ships independent checkers for the structural properties the
//! construction is supposed to guarantee.
//!
//! Coordinates are generic over [`Scalar`] (`f32` or `f64`); distances are
//! always accumulated and reported in `f64`.
//!
//! ```
//! use mrng::{build_mrng, best_first, generate_uniform_dataset, pick_entry, Dataset32};
//!
//! let data: Dataset32 = generate_uniform_dataset(200, 4, 1).unwrap();
//! let g = build_mrng(&data).unwrap();
//! let q = vec![0.5f32; 4];
//! let hit = best_first(&g, &data, pick_entry(&data).unwrap(), &q, 200, 1).unwrap();
//! assert!(hit.top1().is_some());
//! ```

pub mod construct;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod scalar;
pub mod search;
pub mod verify;

pub use construct::{
    build, build_generalized, build_mrng, compute_conflicts, conflict_multiplicity, knn_pools,
    BuildParams, BuildReport, DistanceMatrix,
};
pub use error::{MrngError, Result};
pub use geometry::{
    angle_at, distance, f_theta, g_theta, generate_uniform_dataset, generate_uniform_queries,
    h_theta, in_lune, s_theta, Dataset,
};
pub use graph::{
    degree_stats, load_conflicts, load_graph, save_conflicts, save_graph, ConflictMap, DegreeBound,
    DegreeStats, Neighbor, PoolDescriptor, ProximityGraph,
};
pub use scalar::Scalar;
pub use search::{
    best_first, closer_and_go, conflict_search, pick_entry, search_with_escape, SearchResult,
};
pub use verify::{
    brute_force_knn, check_angle_separation, check_edge_minimality, check_mrng_definition,
    is_monotonic, CheckReport,
};

/// Single-precision dataset, the on-disk representation.
pub type Dataset32 = Dataset<f32>;
/// Double-precision dataset.
pub type Dataset64 = Dataset<f64>;
