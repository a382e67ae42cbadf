//! Variational autoencoder for single-cell counts whose leading latent
//! dimensions carry a sparse Gaussian-process prior built from a
//! cell-cell-communication kernel.

pub mod autodiff;
pub mod ccc_kernel;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod scalar;
pub mod sparse_gp;
pub mod special;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Mat = Matrix<f64>;
