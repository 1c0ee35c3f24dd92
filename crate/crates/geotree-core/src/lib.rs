//! Core algorithms for geospatial regression trees whose split selection
//! jointly optimizes impurity reduction, spatial evenness of residuals
//! (global Moran's I) and explanation robustness (modularity of a consensus
//! similarity network built from stimulus-response and attribution
//! distances).
//!
//! The crate is `no_std`-compatible (`alloc` required): it contains only
//! pure computation over in-memory tables. CSV ingestion, model files and
//! the command-line pipeline live in the companion `geotree-cli` crate.
//!
//! Module map:
//! - [`dataset`]: standardized feature tables, k-NN spatial weights, k-fold
//!   index splits.
//! - [`gwr`]: geographically weighted regression (local coefficients).
//! - [`tree`]: split rules, tree growth under the combined gain, prediction.
//! - [`shap`]: exact interventional Shapley attribution over a background
//!   sample set.
//! - [`moran`]: global Moran's I of residual vectors.
//! - [`network`]: similarity networks, Hadamard consensus and modularity
//!   maximization.
//! - [`metrics`]: accuracy metrics, attribution-dispersion reports and
//!   cross-validation over (msl, md) grids.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("geotree-core requires either the `std` or the `libm` feature");

extern crate alloc;

pub mod dataset;
pub mod gwr;
pub mod math;
pub mod metrics;
pub mod moran;
pub mod network;
pub mod shap;
pub mod tree;

mod matrix;

pub use matrix::Matrix;

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the numeric core.
///
/// IO-side failures (schema, parsing, model documents) are owned by the
/// companion crate; everything here is a property of the computation itself.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied parameter violates a precondition.
    Parameter(String),
    /// A column has zero variance and cannot be standardized.
    DegenerateColumn(String),
    /// A local weighted least-squares system stayed singular after the
    /// ridge fallback.
    SingularFit { anchor: usize },
    /// Row arity does not match what the model expects.
    Shape { expected: usize, got: usize },
    /// A statistic is undefined because the input values have no variance.
    ZeroVariance,
    /// A geometric construction degenerated (e.g. a similarity network
    /// without any positive entry).
    DegenerateGeometry(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::DegenerateColumn(name) => {
                write!(f, "column `{name}` has zero variance")
            }
            Error::SingularFit { anchor } => {
                write!(f, "singular local fit at anchor {anchor}")
            }
            Error::Shape { expected, got } => {
                write!(f, "expected rows of arity {expected}, got {got}")
            }
            Error::ZeroVariance => write!(f, "statistic undefined: zero variance"),
            Error::DegenerateGeometry(msg) => write!(f, "degenerate geometry: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
