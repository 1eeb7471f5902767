//! Bayesian multivariate spatial regression with treed Gaussian processes.
//!
//! The model places a Gaussian process over several correlated spatial
//! variables, then makes posterior sampling scale by conditioning the
//! process on a treed directed acyclic graph: a recursive domain partition
//! spreads a reference subset of the data over branch nodes, everything
//! else hangs off terminal branches as leaves, and each node's law depends
//! only on its parent set. The induced joint density factorizes node by
//! node, the implied precision matrix is block-sparse, and Gibbs sweeps
//! update whole nodes in parallel phases.
//!
//! The crate is generic over the scalar type through [`scalar::Real`]
//! (`f64` for real work, `f32` exercised in tests); the aliases at the
//! crate root fix `f64` for the common case.

// Validations use `!(x > 0)` rather than `x <= 0` on purpose: the negated
// form also rejects NaN, which would sail through the direct comparison.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod error;
pub mod factors;
pub mod linalg;
pub mod mcmc;
pub mod oracle;
pub mod precision;
pub mod predict;
pub mod ram;
pub mod scalar;
pub mod synthgen;
pub mod tabular;
pub mod treegraph;

pub use error::{Error, Result};

/// Expanded location (coordinates × variable index) over `f64`.
pub type Location = treegraph::ExpandedLocation<f64>;
/// Treed conditioning graph over `f64`.
pub type Dag = treegraph::TreedDag<f64>;
/// Graph construction parameters over `f64`.
pub type DagParams = treegraph::TreeParams<f64>;
/// Covariance parameters over `f64`.
pub type Params = covariance::Theta<f64>;
/// Model data (graph, covariates, observation rows) over `f64`.
pub type Data = mcmc::ModelData<f64>;
/// Sampler configuration over `f64`.
pub type FitConfig = mcmc::ChainConfig<f64>;
/// Posterior draws and diagnostics over `f64`.
pub type Fit = mcmc::ChainOutput<f64>;
