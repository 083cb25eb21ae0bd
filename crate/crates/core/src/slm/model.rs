use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::logdet::{log_det, LogDetBackend, SparseLu};
use crate::error::{Error, Result};
use crate::weights::SpatialWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmParams {
    pub beta: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
}

impl SlmParams {
    pub fn new(beta: Vec<f64>, rho: f64, sigma2: f64) -> Self {
        Self { beta, rho, sigma2 }
    }

    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }
}

/// Factorised `I − ρW`, reusable across many right-hand sides.
#[derive(Debug, Clone)]
pub struct SpatialFilter {
    rho: f64,
    lu: Option<SparseLu>,
}

impl SpatialFilter {
    pub fn new(w: &SpatialWeights, rho: f64) -> Result<Self> {
        if rho == 0.0 {
            return Ok(Self { rho, lu: None });
        }
        Ok(Self {
            rho,
            lu: Some(SparseLu::factor(w, rho)?),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `(I − ρW)⁻¹ b`.
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        match &self.lu {
            Some(lu) => lu.solve(b),
            None => b.to_vec(),
        }
    }
}

/// `y = (I − ρW)⁻¹ (Xβ + σ ε)` for a given noise vector.
pub fn simulate_with_noise(
    x: &DMatrix<f64>,
    filter: &SpatialFilter,
    params: &SlmParams,
    eps: &[f64],
) -> Result<DVector<f64>> {
    if params.beta.len() != x.ncols() {
        return Err(Error::InvalidInput(format!(
            "beta has {} entries for {} columns",
            params.beta.len(),
            x.ncols()
        )));
    }
    if eps.len() != x.nrows() {
        return Err(Error::InvalidInput(
            "noise length differs from rows of X".into(),
        ));
    }
    if !(params.sigma2 >= 0.0) {
        return Err(Error::InvalidInput("sigma2 must be nonnegative".into()));
    }
    let sigma = params.sigma2.sqrt();
    let mean = x * params.beta_vector();
    let rhs: Vec<f64> = mean.iter().zip(eps).map(|(m, e)| m + sigma * e).collect();
    Ok(DVector::from_vec(filter.apply(&rhs)))
}

/// Draws `y` from the model with standard normal innovations taken from `rng`.
pub fn simulate<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    w: &SpatialWeights,
    params: &SlmParams,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x.nrows() != w.n() {
        return Err(Error::InvalidInput("X and W differ in size".into()));
    }
    w.check_rho(params.rho)?;
    let filter = SpatialFilter::new(w, params.rho)?;
    let eps: Vec<f64> = (0..x.nrows()).map(|_| rng.sample(StandardNormal)).collect();
    simulate_with_noise(x, &filter, params, &eps)
}

/// Gaussian log-likelihood
/// `−(n/2) ln(2πσ²) + ln|I − ρW| − e'e / (2σ²)` with `e = (I − ρW)y − Xβ`.
pub fn loglik(
    params: &SlmParams,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
) -> Result<f64> {
    loglik_with(params, y, x, w, LogDetBackend::Eigen)
}

pub(crate) fn loglik_with(
    params: &SlmParams,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
    backend: LogDetBackend,
) -> Result<f64> {
    if !(params.sigma2 > 0.0) {
        return Err(Error::InvalidInput("sigma2 must be positive".into()));
    }
    let n = y.len() as f64;
    let e = residuals(params, y, x, w);
    let ld = log_det(w, params.rho, backend)?;
    Ok(
        -0.5 * n * (2.0 * std::f64::consts::PI * params.sigma2).ln() + ld
            - e.norm_squared() / (2.0 * params.sigma2),
    )
}

/// `e = y − ρWy − Xβ`.
pub(crate) fn residuals(
    params: &SlmParams,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
) -> DVector<f64> {
    let wy = w.mul_vector(y);
    y - wy * params.rho - x * params.beta_vector()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::generate_quadrant_population;
    use crate::rng;
    use crate::slm::column;
    use crate::weights::{SpatialWeights, WeightScheme, WeightSpec};
    use rand_distr::{Distribution, Normal};

    fn small_w() -> SpatialWeights {
        // Row-standardised 3-point chain 0-1-2.
        let raw = SpatialWeights::from_triplets(
            3,
            vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
            WeightScheme::InverseDistance,
        )
        .unwrap();
        crate::weights::row_standardize(&raw)
    }

    #[test]
    fn noiseless_no_spatial_term() {
        let x = column(&[1.0, 2.0, 3.0]);
        let w = small_w();
        let p = SlmParams::new(vec![2.5], 0.0, 0.0);
        let y = simulate(&x, &w, &p, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(y.as_slice(), &[2.5, 5.0, 7.5]);
    }

    #[test]
    fn ols_case_noise_variance() {
        let pop = generate_quadrant_population([30, 30, 30, 30], 3);
        let w = WeightSpec::threshold().build(&pop).unwrap();
        let x = column(&vec![1.0; pop.len()]);
        let p = SlmParams::new(vec![1.0], 0.0, 1.0);
        let mut r = rng::stream(9, &[]);
        let mut resid = Vec::new();
        for _ in 0..200 {
            let y = simulate(&x, &w, &p, &mut r).unwrap();
            resid.extend(y.iter().map(|v| v - 1.0));
        }
        let m = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / m;
        let var = resid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        // SE of a sample variance of normals is sqrt(2/(m-1)).
        assert!((var - 1.0).abs() < 3.0 * (2.0 / (m - 1.0)).sqrt());
    }

    #[test]
    fn simulated_mean_matches_dense_solve() {
        let pop = generate_quadrant_population([2000, 200, 1000, 2400], 1);
        let sample = crate::geometry::convenience_sample(
            &pop,
            &crate::geometry::quadrant_counts([70, 20, 150, 30]),
            2,
        )
        .unwrap();
        let w = WeightSpec::threshold().build(&sample).unwrap();
        let n = sample.len();
        let normal = Normal::new(10.0, 1.0).unwrap();
        let mut xr = rng::stream(5, &[]);
        let xv: Vec<f64> = (0..n).map(|_| normal.sample(&mut xr)).collect();
        let x = column(&xv);
        let p = SlmParams::new(vec![1.0], 0.4, 1.0);

        // Oracle: dense solve of (I - ρW) μ = Xβ.
        let a = DMatrix::identity(n, n) - w.to_dense() * 0.4;
        let mu = a.lu().solve(&(&x * p.beta_vector())).unwrap();

        let reps = 1000;
        let mut acc = DVector::zeros(n);
        let mut acc2 = DVector::zeros(n);
        let mut r = rng::stream(6, &[]);
        for _ in 0..reps {
            let y = simulate(&x, &w, &p, &mut r).unwrap();
            acc += &y;
            acc2 += y.component_mul(&y);
        }
        let mean = &acc / reps as f64;
        for i in 0..n {
            let var = acc2[i] / reps as f64 - mean[i] * mean[i];
            let se = (var / reps as f64).sqrt();
            assert!((mean[i] - mu[i]).abs() < 4.5 * se, "point {i}");
        }
    }

    #[test]
    fn loglik_rho_zero_is_regression_loglik() {
        let x = column(&[1.0, 2.0, 4.0]);
        let y = DVector::from_vec(vec![1.5, 1.9, 4.4]);
        let p = SlmParams::new(vec![1.05], 0.0, 0.3);
        let e = &y - &x * 1.05;
        let want = -1.5 * (2.0 * std::f64::consts::PI * 0.3).ln() - e.norm_squared() / 0.6;
        assert!((loglik(&p, &y, &x, &small_w()).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn loglik_three_point_hand_evaluation() {
        // W = [[0,1,0],[.5,0,.5],[0,1,0]], det(I - ρW) = 1 - ρ² (cofactor
        // expansion: 1·(1 - ρ²/2) - ρ·(ρ/2) = 1 - ρ²).
        let w = small_w();
        let x = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 2.0]);
        let y = DVector::from_vec(vec![0.7, -0.2, 1.1]);
        let (rho, beta, s2) = (0.35, 0.8, 0.45);
        let e = [
            0.7 - rho * (-0.2) - beta * 1.0,
            -0.2 - rho * 0.5 * (0.7 + 1.1) - beta * (-1.0),
            1.1 - rho * (-0.2) - beta * 2.0,
        ];
        let ee: f64 = e.iter().map(|v| v * v).sum();
        let want = -1.5 * (2.0 * std::f64::consts::PI * s2).ln() + (1.0 - rho * rho).ln()
            - ee / (2.0 * s2);
        let got = loglik(&SlmParams::new(vec![beta], rho, s2), &y, &x, &w).unwrap();
        assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        let lu = loglik_with(
            &SlmParams::new(vec![beta], rho, s2),
            &y,
            &x,
            &w,
            LogDetBackend::SparseLu,
        )
        .unwrap();
        assert!((lu - want).abs() < 1e-13);
    }

    #[test]
    fn rejects_nonpositive_variance() {
        let x = column(&[1.0, 2.0, 4.0]);
        let y = DVector::from_vec(vec![1.5, 1.9, 4.4]);
        let p = SlmParams::new(vec![1.0], 0.0, 0.0);
        assert!(loglik(&p, &y, &x, &small_w()).is_err());
    }
}
