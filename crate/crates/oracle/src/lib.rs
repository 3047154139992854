//! Ground-truth posteriors for validating the sampler.
//!
//! Nothing here shares code with the sampler: the Fourier basis is built as
//! an explicit matrix from its closed form, Gaussian posteriors are solved
//! both per coefficient and as one dense linear system, and low-dimensional
//! mixture posteriors are tabulated on a grid.

mod basis;
mod gaussian;
mod grid;

pub use basis::dense_fourier_basis;
pub use gaussian::{
    gaussian_posterior_dense, gaussian_posterior_exact, gaussian_smoothed_score, DensePosterior,
    ExactGaussianPosterior, GaussianSource,
};
pub use grid::{grid_posterior, tv_distance, tv_distance_weighted, Density1d, GridDensity, GridSpec, Mixture1d};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("prior {0} is not a spectral Gaussian")]
    NotGaussian(usize),
    #[error("grid too coarse: {0} points per axis, need at least 64")]
    GridTooCoarse(usize),
    #[error("empty sample set")]
    EmptySamples,
    #[error("covariance is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("linear solve failed: {0}")]
    Singular(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;
