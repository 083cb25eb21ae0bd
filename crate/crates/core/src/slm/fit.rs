//! Maximum likelihood by concentration.
//!
//! For fixed ρ, `β̂(ρ) = β̂₀ − ρβ̂_L` and `σ̂²(ρ) = |e₀ − ρe_L|² / n`, where
//! `β̂₀, e₀` and `β̂_L, e_L` are the OLS coefficients and residuals of `y` and
//! `Wy` on X. The concentrated log-likelihood
//!
//! ```text
//! ℓc(ρ) = −(n/2)(ln 2π + 1) − (n/2) ln σ̂²(ρ) + ln|I − ρW|
//! ```
//!
//! is maximised over the admissible interval by a coarse grid followed by
//! golden-section refinement. Everything is derivative-free and
//! deterministic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::info::{avar, information_matrix, score};
use super::logdet::{log_det, LogDetBackend};
use super::model::{loglik_with, SlmParams};
use super::ols;
use crate::error::{Error, Result};
use crate::weights::SpatialWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub grid_points: usize,
    pub refine_tol: f64,
    /// Prepend a constant column to X.
    pub intercept: bool,
    /// Skip the ρ search and evaluate at this value.
    pub fixed_rho: Option<f64>,
    pub logdet: LogDetBackend,
    /// Accept optima on the edge of the ρ interval instead of failing.
    pub allow_boundary: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid_points: 64,
            refine_tol: 1e-8,
            intercept: false,
            fixed_rho: None,
            logdet: LogDetBackend::Eigen,
            allow_boundary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    /// Golden-section iterations after the grid stage.
    pub iterations: usize,
    /// Norm of the score scaled by `max(|θᵢ|, 1) / n`.
    pub grad_norm: f64,
    pub at_boundary: bool,
}

#[derive(Debug, Clone)]
pub struct SlmFit {
    pub params: SlmParams,
    pub loglik: f64,
    pub info: DMatrix<f64>,
    /// Asymptotic variances, ordered `(β₁..β_p, ρ, σ²)`.
    pub avar: Vec<f64>,
    pub n: usize,
    pub intercept: bool,
    pub rho_interval: (f64, f64),
    pub convergence: Convergence,
    pub grid_points: usize,
    pub refine_tol: f64,
}

impl SlmFit {
    pub fn p(&self) -> usize {
        self.params.beta.len()
    }

    pub fn avar_beta(&self) -> &[f64] {
        &self.avar[..self.p()]
    }

    pub fn avar_rho(&self) -> f64 {
        self.avar[self.p()]
    }

    pub fn avar_sigma2(&self) -> f64 {
        self.avar[self.p() + 1]
    }

    /// Coefficient of the last regressor (the slope when an intercept is
    /// prepended).
    pub fn slope(&self) -> f64 {
        *self.params.beta.last().expect("at least one regressor")
    }

    pub fn slope_avar(&self) -> f64 {
        self.avar[self.p() - 1]
    }

    pub fn to_json(&self) -> SlmFitJson {
        SlmFitJson {
            beta: self.params.beta.clone(),
            rho: self.params.rho,
            sigma2: self.params.sigma2,
            loglik: self.loglik,
            avar_beta: self.avar_beta().to_vec(),
            avar_rho: self.avar_rho(),
            avar_sigma2: self.avar_sigma2(),
            n: self.n,
            converged: self.convergence.converged,
            grid_points: self.grid_points,
            refine_tol: self.refine_tol,
        }
    }
}

/// Flat key-value form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmFitJson {
    pub beta: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub avar_beta: Vec<f64>,
    pub avar_rho: f64,
    pub avar_sigma2: f64,
    pub n: usize,
    pub converged: bool,
    pub grid_points: usize,
    pub refine_tol: f64,
}

/// OLS pieces shared by every evaluation of the concentrated likelihood.
pub(crate) struct Concentrated<'a> {
    w: &'a SpatialWeights,
    backend: LogDetBackend,
    n: f64,
    b0: DVector<f64>,
    bl: DVector<f64>,
    e0e0: f64,
    e0el: f64,
    elel: f64,
}

impl<'a> Concentrated<'a> {
    pub(crate) fn new(
        y: &DVector<f64>,
        x: &DMatrix<f64>,
        w: &'a SpatialWeights,
        backend: LogDetBackend,
    ) -> Result<Self> {
        let wy = w.mul_vector(y);
        let b0 = ols(x, y)?;
        let bl = ols(x, &wy)?;
        let e0 = y - x * &b0;
        let el = &wy - x * &bl;
        Ok(Self {
            w,
            backend,
            n: y.len() as f64,
            e0e0: e0.norm_squared(),
            e0el: e0.dot(&el),
            elel: el.norm_squared(),
            b0,
            bl,
        })
    }

    pub(crate) fn sigma2(&self, rho: f64) -> f64 {
        (self.e0e0 - 2.0 * rho * self.e0el + rho * rho * self.elel) / self.n
    }

    pub(crate) fn beta(&self, rho: f64) -> DVector<f64> {
        &self.b0 - &self.bl * rho
    }

    pub(crate) fn value(&self, rho: f64) -> Result<f64> {
        let s2 = self.sigma2(rho);
        if !(s2 > 0.0) {
            return Err(Error::Numerical(format!(
                "residual variance {s2} at rho = {rho}"
            )));
        }
        let ld = match self.backend {
            LogDetBackend::Eigen => super::logdet::log_det_eigen(self.w.eigenvalues()?, rho)?,
            b => log_det(self.w, rho, b)?,
        };
        Ok(-0.5 * self.n * ((2.0 * std::f64::consts::PI).ln() + 1.0) - 0.5 * self.n * s2.ln() + ld)
    }
}

/// Profile log-likelihood of ρ, with β and σ² at their conditional optima.
pub fn concentrated_loglik(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
    rho: f64,
) -> Result<f64> {
    Concentrated::new(y, x, w, LogDetBackend::Eigen)?.value(rho)
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximisation on `[a, b]` until the bracket is below `tol`.
fn golden_max<F>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, usize)>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut it = 0;
    while (b - a) > tol && it < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
        it += 1;
    }
    Ok((0.5 * (a + b), it))
}

/// Fits the spatial lag model by maximum likelihood.
pub fn fit_ml(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
    options: &FitOptions,
) -> Result<SlmFit> {
    let x = if options.intercept {
        let mut xi = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
        xi.view_mut((0, 1), (x.nrows(), x.ncols())).copy_from(x);
        xi
    } else {
        x.clone()
    };
    let (n, p) = x.shape();
    if y.len() != n || w.n() != n {
        return Err(Error::InvalidInput(format!(
            "size mismatch: y has {}, X has {n} rows, W is {}x{}",
            y.len(),
            w.n(),
            w.n()
        )));
    }
    if n <= p + 2 {
        return Err(Error::InvalidInput(format!(
            "need n > p + 2 observations, got n = {n}, p = {p}"
        )));
    }
    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if !(smax > 0.0) || sv.min() <= smax * 1e-12 {
        return Err(Error::RankDeficient);
    }
    if options.grid_points < 3 {
        return Err(Error::InvalidInput("grid needs at least 3 points".into()));
    }

    let interval = w.rho_interval()?;
    let conc = Concentrated::new(y, &x, w, options.logdet)?;

    let (rho, iterations, at_boundary) = match options.fixed_rho {
        Some(r) => {
            w.check_rho(r)?;
            (r, 0, false)
        }
        None => {
            let (lo, hi) = interval;
            let g = options.grid_points;
            let grid: Vec<f64> = (0..g)
                .map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64)
                .collect();
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (i, &r) in grid.iter().enumerate() {
                let v = conc.value(r)?;
                if v > best_val {
                    best_val = v;
                    best = i;
                }
            }
            let a = grid[best.saturating_sub(1)];
            let b = grid[(best + 1).min(g - 1)];
            let (r, it) = golden_max(|r| conc.value(r), a, b, options.refine_tol)?;
            let edge = 10.0 * options.refine_tol;
            let at_boundary = (best == 0 && r - lo < edge) || (best == g - 1 && hi - r < edge);
            if at_boundary && !options.allow_boundary {
                return Err(Error::Boundary { rho: r });
            }
            (r, it, at_boundary)
        }
    };

    let beta = conc.beta(rho);
    let sigma2 = conc.sigma2(rho);
    if !(sigma2 > 0.0) {
        return Err(Error::Numerical("zero residual variance".into()));
    }
    let params = SlmParams::new(beta.iter().copied().collect(), rho, sigma2);
    let loglik = loglik_with(&params, y, &x, w, options.logdet)?;
    let info = information_matrix(&x, w, &params)?;
    let avar = avar(&info)?;

    let s = score(y, &x, w, &params)?;
    let theta: Vec<f64> = params.beta.iter().copied().chain([rho, sigma2]).collect();
    let grad_norm = s
        .iter()
        .zip(&theta)
        .map(|(g, t)| (g * t.abs().max(1.0) / n as f64).powi(2))
        .sum::<f64>()
        .sqrt();

    Ok(SlmFit {
        params,
        loglik,
        info,
        avar,
        n,
        intercept: options.intercept,
        rho_interval: interval,
        convergence: Convergence {
            converged: options.fixed_rho.is_some() || iterations < 200,
            iterations,
            grad_norm,
            at_boundary,
        },
        grid_points: options.grid_points,
        refine_tol: options.refine_tol,
    })
}
