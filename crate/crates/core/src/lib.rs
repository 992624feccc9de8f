//! Deep feature Gaussian processes for single-scene raster gap-filling.
//!
//! A small contextual residual CNN turns per-pixel covariates into deep
//! features, and a Gaussian process regresses the target over those features
//! and/or spatial coordinates. The GP comes in two forms: an exact
//! Cholesky-based model for small problems (and as a correctness oracle), and
//! a scalable variational inducing-point model trained by mini-batch ELBO
//! ascent for scene-scale data. Composing the two stages yields the model
//! families `GP`, `GPs`, `DFGP`, and `DFGPs`, plus `LR` and plain-`CNN`
//! baselines, all producing gap-filled rasters with posterior uncertainty.
//!
//! Everything is deterministic per seed when run single-threaded; see
//! [`rng::RngSeed`] for how streams are derived.

pub mod dataset;
pub mod error;
pub mod gp;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model_io;
pub mod numeric;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod sweep;
pub mod synth;
pub mod wcrn;

pub use error::{Error, Result};
