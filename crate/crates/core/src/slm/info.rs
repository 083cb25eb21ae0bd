//! Information matrix and asymptotic variances for `θ = (β, ρ, σ²)`.
//!
//! With `G = W (I − ρW)⁻¹` the estimated (expected) information is
//!
//! ```text
//! I_ββ   = X'X / σ²              I_βρ   = X'GXβ / σ²        I_βσ² = 0
//! I_ρρ   = tr(G²) + tr(G'G) + (GXβ)'(GXβ) / σ²
//! I_ρσ²  = tr(G) / σ²            I_σ²σ² = n / (2σ⁴)
//! ```
//!
//! in total (not per-observation) units, so that it is the curvature of the
//! log-likelihood itself.

use nalgebra::{DMatrix, DVector};

use super::model::{residuals, SlmParams};
use crate::error::{Error, Result};
use crate::weights::SpatialWeights;

/// Dense `G = W (I − ρW)⁻¹`.
fn g_matrix(w: &SpatialWeights, rho: f64) -> Result<DMatrix<f64>> {
    let n = w.n();
    let wd = w.to_dense();
    if rho == 0.0 {
        return Ok(wd);
    }
    let a = DMatrix::identity(n, n) - &wd * rho;
    // W and (I − ρW)⁻¹ commute, so solving A G = W gives the same G.
    a.lu()
        .solve(&wd)
        .ok_or(Error::Singular { row: 0, pivot: 0.0 })
}

fn traces(g: &DMatrix<f64>) -> (f64, f64, f64) {
    let n = g.nrows();
    let mut tr = 0.0;
    let mut tr_sq = 0.0;
    let mut frob = 0.0;
    for i in 0..n {
        tr += g[(i, i)];
        for j in 0..n {
            tr_sq += g[(i, j)] * g[(j, i)];
            frob += g[(i, j)] * g[(i, j)];
        }
    }
    (tr, tr_sq, frob)
}

/// Estimated information matrix, order `p + 2`, parameters ordered
/// `(β₁..β_p, ρ, σ²)`.
pub fn information_matrix(
    x: &DMatrix<f64>,
    w: &SpatialWeights,
    params: &SlmParams,
) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let s2 = params.sigma2;
    let g = g_matrix(w, params.rho)?;
    let (tr_g, tr_g2, tr_gtg) = traces(&g);
    let gxb = &g * (x * params.beta_vector());

    let mut info = DMatrix::zeros(p + 2, p + 2);
    let xtx = x.transpose() * x / s2;
    info.view_mut((0, 0), (p, p)).copy_from(&xtx);
    let xtgxb = x.transpose() * &gxb / s2;
    for k in 0..p {
        info[(k, p)] = xtgxb[k];
        info[(p, k)] = xtgxb[k];
    }
    info[(p, p)] = tr_g2 + tr_gtg + gxb.norm_squared() / s2;
    info[(p, p + 1)] = tr_g / s2;
    info[(p + 1, p)] = tr_g / s2;
    info[(p + 1, p + 1)] = n as f64 / (2.0 * s2 * s2);
    Ok(info)
}

/// Negative analytic Hessian of the log-likelihood at `params` for data `y`.
pub fn observed_information(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
    params: &SlmParams,
) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let s2 = params.sigma2;
    let g = g_matrix(w, params.rho)?;
    let (_, tr_g2, _) = traces(&g);
    let wy = w.mul_vector(y);
    let e = residuals(params, y, x, w);

    let mut h = DMatrix::zeros(p + 2, p + 2);
    h.view_mut((0, 0), (p, p))
        .copy_from(&(x.transpose() * x / s2));
    let xtwy = x.transpose() * &wy / s2;
    let xte = x.transpose() * &e / (s2 * s2);
    for k in 0..p {
        h[(k, p)] = xtwy[k];
        h[(p, k)] = xtwy[k];
        h[(k, p + 1)] = xte[k];
        h[(p + 1, k)] = xte[k];
    }
    h[(p, p)] = tr_g2 + wy.norm_squared() / s2;
    let c = wy.dot(&e) / (s2 * s2);
    h[(p, p + 1)] = c;
    h[(p + 1, p)] = c;
    h[(p + 1, p + 1)] = -(n as f64) / (2.0 * s2 * s2) + e.norm_squared() / (s2 * s2 * s2);
    Ok(h)
}

/// Gradient of the log-likelihood, ordered `(β, ρ, σ²)`.
pub fn score(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
    params: &SlmParams,
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    let s2 = params.sigma2;
    let e = residuals(params, y, x, w);
    let wy = w.mul_vector(y);
    let tr_g: f64 = match w.eigenvalues() {
        Ok(ev) => ev.iter().map(|l| l / (1.0 - params.rho * l)).sum(),
        Err(_) => traces(&g_matrix(w, params.rho)?).0,
    };
    let mut s = DVector::zeros(p + 2);
    s.rows_mut(0, p).copy_from(&(x.transpose() * &e / s2));
    s[p] = -tr_g + wy.dot(&e) / s2;
    s[p + 1] = -(n as f64) / (2.0 * s2) + e.norm_squared() / (2.0 * s2 * s2);
    Ok(s)
}

/// Diagonal of the inverse information: asymptotic variances.
pub fn avar(info: &DMatrix<f64>) -> Result<Vec<f64>> {
    if info.nrows() != info.ncols() {
        return Err(Error::InvalidInput(
            "information matrix must be square".into(),
        ));
    }
    let sym = (info + info.transpose()) * 0.5;
    match sym.clone().cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            Ok((0..inv.nrows()).map(|i| inv[(i, i)]).collect())
        }
        None => {
            let ev = sym.symmetric_eigenvalues();
            let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            Err(Error::NotPositiveDefinite {
                eigenvalues: ev.iter().copied().collect(),
                condition: max / min,
            })
        }
    }
}
