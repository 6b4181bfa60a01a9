//! Semiparametric estimation for longitudinal Poisson latent space
//! network models.
//!
//! Counts `A_t,ij ~ Poisson(exp(alpha_it + alpha_jt + z_i . z_j))` are
//! observed on `T` symmetric `n x n` slices. The crate provides a simulator,
//! a two-stage initializer, the one-step efficient estimator of the latent
//! positions `Z`, a nuclear-norm penalized likelihood estimator of
//! `G = Z Z^T`, evaluation metrics, trip-log ingestion and a Monte Carlo
//! harness.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod init;
pub mod io;
pub mod linalg;
pub mod model;
pub mod onestep;
pub mod penalized;
pub mod pipeline;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{Baseline, CountTensor, InfoMode, LatentPositions, ModelBounds};
