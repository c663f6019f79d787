//! Deep nonparametric regression with an estimated-maximum-likelihood (EML)
//! loss.
//!
//! The EML objective is the negative mean log of a kernel density estimate
//! of the current training residuals, evaluated at each residual. It is
//! trained alongside least squares and four robust losses (LAD, Huber,
//! Cauchy, Tukey's biweight) on a ReLU multilayer perceptron with full-batch
//! Adam.
//!
//! Modules:
//! - [`numerics`]: dense matrices and the seeded random source;
//! - [`kde`]: Gaussian kernel, nearest-neighbour bandwidths, density at residuals;
//! - [`losses`]: the six objectives and their gradients in the residuals;
//! - [`neuralnet`]: the MLP, He-uniform initialisation, forward/backward passes;
//! - [`trainer`]: Adam, the training loop, fine-tuning and checkpoints;
//! - [`simbench`]: simulation designs and bias/SD/RMSE/PE metrics.
//!
//! Data-parallel loops go through [`Exec`]; with the `parallel` feature
//! (default) they run on rayon, otherwise sequentially. Results are bitwise
//! identical either way.

pub mod error;
pub mod exec;
pub mod kde;
pub mod losses;
pub mod neuralnet;
pub mod numerics;
pub mod simbench;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use numerics::{Matrix, RngState};
