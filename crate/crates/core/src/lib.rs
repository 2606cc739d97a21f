//! Rank-based and kernel-based comparison of neural representations.
//!
//! The crate is organised around four layers:
//!
//! - [`tensorio`]: point clouds, the ragged activation store format and pair
//!   manifests.
//! - [`metrics`]: exact neighbor ranks, Information Imbalance, linear CKA,
//!   Neighborhood Overlap, directional asymmetry and half-sample jackknife
//!   error bars.
//! - [`synthbench`]: synthetic Gaussian constructions (low-rank linear maps
//!   and feature subsets) and the sweeps that run the metrics over them.
//! - [`pipeline`]: token aggregation and layer/depth/offset profiles over
//!   activation stores, plus the batch-shuffle null control.
//!
//! Tabular outputs share the CSV/JSON helpers in [`table`].

pub mod metrics;
pub mod pipeline;
pub mod synthbench;
pub mod table;
pub mod tensorio;

pub use metrics::{
    asymmetry, information_imbalance, jackknife, linear_cka, neighborhood_overlap, rank_matrix,
    AsymmetryResult, Direction, MetricError, MetricKind, MetricResult, RankMatrix,
};
pub use tensorio::{
    load_store, validate_manifest, write_store, ActivationRecord, ActivationStore, PairManifest, PointCloud,
    StoreError, StoreMetadata,
};
