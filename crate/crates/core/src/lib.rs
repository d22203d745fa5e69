//! Scalable spectral clustering with random binning features.
//!
//! The pipeline approximates a fully connected Laplacian-kernel affinity
//! graph by a sparse random binning feature matrix `Z` (so `W ≈ Z Zᵀ`),
//! forms the normalized operator `Ẑ = D̂^{−1/2} Z` without ever building an
//! `N × N` matrix, takes the top left singular vectors of `Ẑ` with a
//! matvec-only eigensolver, row-normalizes them and runs K-means.
//!
//! Modules, bottom up:
//!
//! - [`datasets`]: LIBSVM ingestion and synthetic generators.
//! - [`rb_features`]: random grids, the RB feature matrix, κ, and random
//!   Fourier features for comparison.
//! - [`sparse`]: the [`sparse::FeatureOperator`] abstraction and storage.
//! - [`graph`]: degrees, row weighting and the implicit Laplacian.
//! - [`eigensolver`]: block Davidson with thick restart.
//! - [`kmeans`]: k-means++ / Lloyd with replicates.
//! - [`pipeline`]: SC with RB, SC with RF, exact dense SC, plain K-means.
//! - [`metrics`]: NMI, Rand index, F-measure, accuracy, average rank.
//! - [`bench`]: experiment sweeps, run records and scaling fits.

pub mod bench;
pub mod datasets;
pub mod eigensolver;
pub mod error;
pub mod graph;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod rb_features;
pub mod sparse;

pub use error::{Error, Result};
