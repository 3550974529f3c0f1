//! GARLIC: an approximate nearest-neighbor index that partitions the data with a
//! learned set of anisotropic Gaussians.
//!
//! The build pipeline is
//!
//! 1. [`init`]: K-Means++ seeding and Cholesky-factor initialization,
//! 2. [`training`]: gradient descent on the coverage / confidence / anchor objective,
//!    interleaved with [`refinement`] (split, clone, prune),
//! 3. [`index`]: bucket assignment plus per-bucket PCA and hyperspherical binning.
//!
//! Queries ([`query`]) select buckets by Mahalanobis distance, probe the closest bins
//! and re-rank candidates by exact Euclidean distance. [`eval`] holds the brute-force
//! oracle and recall metrics; [`io`] and [`config`] cover file formats and run
//! configuration.

// `!(a < b)` is used deliberately so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod config;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod index;
pub mod init;
pub mod io;
pub mod params;
pub mod query;
pub mod refinement;
pub mod training;
pub mod vectors;

pub use error::{GarlicError, Result};
pub use gaussian::{
    mahalanobis, mahalanobis_batch, materialize_cholesky, CholeskyFactor, DistanceMatrix,
    GaussianParams, GaussianSet,
};
pub use index::{build_index, Bucket, Index};
pub use params::HyperParams;
pub use query::{classify, search, BucketMode, QueryBudget, QueryResult};
pub use training::{fit, TrainState};
pub use vectors::VectorSet;
