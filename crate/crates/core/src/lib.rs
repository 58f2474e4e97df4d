//! Metric learning on the unit hypersphere with von Mises-Fisher (vMF) statistics.
//!
//! The crate is organised bottom-up:
//!
//! - [`sphere`] and [`bessel`]: vMF density, normalizer, estimators, sampling and
//!   hypersphere geometry.
//! - [`objective`]: the vMF loss over class prototypes with analytic gradients.
//! - [`network`] and [`checkpoint`]: a small MLP with an L2-normalized output layer.
//! - [`trainer`]: the alternating schedule that freezes prototypes during SGD and
//!   re-estimates them from a full forward pass.
//! - [`eval`]: nearest-prototype classification, Recall@K, NMI and embedding-space
//!   diagnostics.
//! - [`cluster`]: spherical k-means and mixture-of-vMF EM.
//! - [`data`]: IDX and CSV dataset loaders.
//!
//! Batch work (per-sample losses, per-query retrieval, E-steps, chunked forward passes)
//! fans out over rayon when the `parallel` feature is enabled. Results are identical with
//! or without it: every reduction runs in sequential sample order.

// Guards written as `!(x >= 0.0)` reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod checkpoint;
pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod network;
pub mod objective;
pub mod par;
pub mod sphere;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use sphere::{SampleCloud, UnitVector, VmfParams};
