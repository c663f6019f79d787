//! Dense row-major matrices and the seeded random source shared by every
//! other module.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::RngState;
