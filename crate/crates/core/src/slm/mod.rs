//! Spatial lag model `y = Xβ + ρWy + σε`, `ε ~ N(0, I)`.
//!
//! `σ²` is the innovation variance: simulated noise is scaled by `σ`.

mod fit;
mod info;
pub mod logdet;
mod model;

pub use fit::{concentrated_loglik, fit_ml, Convergence, FitOptions, SlmFit, SlmFitJson};
pub use info::{avar, information_matrix, observed_information, score};
pub use logdet::{log_det, LogDetBackend, SparseLu};
pub use model::{loglik, simulate, simulate_with_noise, SlmParams, SpatialFilter};

/// Ordinary least squares through the normal equations, `(X'X)⁻¹X'y`.
pub fn ols(
    x: &nalgebra::DMatrix<f64>,
    y: &nalgebra::DVector<f64>,
) -> crate::Result<nalgebra::DVector<f64>> {
    let xtx = x.transpose() * x;
    let chol = nalgebra::Cholesky::new(xtx).ok_or(crate::Error::RankDeficient)?;
    Ok(chol.solve(&(x.transpose() * y)))
}

/// Single-column design matrix from a regressor vector.
pub fn column(x: &[f64]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_column_slice(x.len(), 1, x)
}
