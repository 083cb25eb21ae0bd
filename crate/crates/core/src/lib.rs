//! Spatial lag model (SLM) estimation for geo-coded data gathered without a
//! sampling design, with flexible post-sampling to trade estimator bias
//! against variance.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: point sets, quadrant populations and convenience samples.
//! - [`weights`]: sparse spatial weight matrices (threshold, k-NN, inverse distance).
//! - [`slm`]: simulation, likelihood, log-determinant backends, ML fitting and
//!   the information matrix.
//! - [`postsample`]: PPS allocation, hard-core / flexible post-sampling and the
//!   MSE-optimal ζ sweep.
//! - [`montecarlo`]: the bias / variance / MSE simulation harness.
//! - [`listings`] and [`hedonic`]: real-data ingestion, polygon strata and the
//!   hedonic price pipeline.
//!
//! Data-parallel loops go through [`exec`]; with the `parallel` feature off
//! every loop runs sequentially and produces identical output.

pub mod error;
pub mod exec;
pub mod geometry;
pub mod hedonic;
pub mod listings;
pub mod montecarlo;
pub mod postsample;
pub mod rng;
pub mod slm;
pub mod weights;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::PointSet;
pub use postsample::{StratifiedDesign, ZetaSweepResult};
pub use slm::{SlmFit, SlmParams};
pub use weights::{SpatialWeights, WeightScheme, WeightSpec};
