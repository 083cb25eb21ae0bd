//! Post-sampling of convenience data towards a PPS-stratified design, and
//! the MSE-driven choice of the post-sampling intensity ζ.
//!
//! For strata `l = 1..L` with auxiliary sizes `s_l` and observed counts
//! `n_l` (total `n`), the design allocates `m_l = n s_l / Σs` points per
//! stratum. Hard-core post-sampling keeps `k m_l` points in every stratum,
//! with `k = min_l n_l / m_l` the largest proportionality constant the data
//! can support. Flexible post-sampling with intensity ζ keeps
//!
//! ```text
//! ñ_l(ζ) = max( h_l, round((1 − ζ) n_l) )
//! ```
//!
//! where `h_l` is the hard-core count: every stratum sheds a fraction ζ of
//! its data but never drops below its hard-core floor. ζ = 0 keeps
//! everything, ζ = 1 is hard-core. The floors `h_l` are `k m_l` rounded by
//! largest remainder so that they total `round(Σ k m_l)`.
//!
//! The sweep fits the model at each ζ of a grid and scores
//! `MSE(ζ) = (β̂_ζ − β̂₁)² + AVar(β̂)_ζ`, taking the hard-core estimate as the
//! bias reference.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{fmt_f64, stratified_subsample_indices, PointSet};
use crate::rng::{self, tag};
use crate::slm::{fit_ml, FitOptions, SlmFit};
use crate::weights::{rebuild_for_subset, WeightSpec};

/// Half-up rounding that tolerates representation error just below `.5`.
fn round_half_up(v: f64) -> usize {
    (v + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Rounds `real` to integers summing to `total`: floors first, then one
/// extra unit to the largest fractional parts. Fractional parts equal to
/// within 1e-9 go to the lower index first.
pub fn largest_remainder(real: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = real
        .iter()
        .map(|v| (v + 1e-9).floor().max(0.0) as usize)
        .collect();
    let assigned: usize = out.iter().sum();
    if assigned >= total {
        return out;
    }
    let mut order: Vec<usize> = (0..real.len()).collect();
    let frac = |i: usize| real[i] - out[i] as f64;
    order.sort_by(|&a, &b| {
        let (fa, fb) = (frac(a), frac(b));
        if (fa - fb).abs() <= 1e-9 {
            a.cmp(&b)
        } else {
            fb.total_cmp(&fa)
        }
    });
    for &i in order.iter().cycle().take(total - assigned) {
        out[i] += 1;
    }
    out
}

/// Real and integer PPS allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub real: Vec<f64>,
    pub integer: Vec<usize>,
}

/// `m_l = n s_l / Σs`, rounded by largest remainder so the total stays `n`.
pub fn pps_allocation(aux_size: &[f64], n: usize) -> Result<Allocation> {
    if aux_size.is_empty() {
        return Err(Error::InvalidInput("no strata".into()));
    }
    if let Some(bad) = aux_size.iter().find(|&&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "auxiliary sizes must be positive, got {bad}"
        )));
    }
    let total: f64 = aux_size.iter().sum();
    let real: Vec<f64> = aux_size.iter().map(|s| n as f64 * s / total).collect();
    let integer = largest_remainder(&real, n);
    Ok(Allocation { real, integer })
}

/// `k = min_l n_l / m_l`, capped at 1. Fails when some stratum has no data,
/// which would force `k = 0`.
pub fn hardcore_constant(observed: &[usize], alloc_real: &[f64]) -> Result<f64> {
    if observed.len() != alloc_real.len() || observed.is_empty() {
        return Err(Error::InvalidInput(
            "observed counts and allocations differ in length".into(),
        ));
    }
    if alloc_real.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidInput("allocations must be positive".into()));
    }
    let k = observed
        .iter()
        .zip(alloc_real)
        .map(|(&n, &m)| n as f64 / m)
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    if k <= 0.0 {
        return Err(Error::InvalidInput(
            "hard-core post-sampling infeasible: a stratum has no observations".into(),
        ));
    }
    Ok(k)
}

/// Post-sampling ratios `m_l / n_l`: above 1 for under-represented strata.
pub fn ps_ratio(alloc_real: &[f64], observed: &[usize]) -> Result<Vec<f64>> {
    if alloc_real.len() != observed.len() {
        return Err(Error::InvalidInput("length mismatch".into()));
    }
    observed
        .iter()
        .zip(alloc_real)
        .enumerate()
        .map(|(l, (&n, &m))| {
            if n == 0 {
                Err(Error::InvalidInput(format!(
                    "post-sampling ratio undefined for stratum index {l}: no observations"
                )))
            } else {
                Ok(m / n as f64)
            }
        })
        .collect()
}

/// A PPS-stratified reference design against observed convenience counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedDesign {
    pub strata: Vec<u32>,
    pub aux_size: Vec<f64>,
    pub observed: Vec<usize>,
    pub alloc: Allocation,
    pub k: f64,
    /// Hard-core counts `k m_l`, rounded by largest remainder.
    pub hardcore: Vec<usize>,
}

impl StratifiedDesign {
    pub fn new(strata: Vec<u32>, aux_size: Vec<f64>, observed: Vec<usize>) -> Result<Self> {
        if strata.len() != aux_size.len() || strata.len() != observed.len() {
            return Err(Error::InvalidInput(
                "strata, auxiliary sizes and counts differ in length".into(),
            ));
        }
        let mut sorted = strata.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != strata.len() {
            return Err(Error::InvalidInput("duplicate stratum labels".into()));
        }
        let n: usize = observed.iter().sum();
        let alloc = pps_allocation(&aux_size, n)?;
        let k = hardcore_constant(&observed, &alloc.real)?;
        let scaled: Vec<f64> = alloc.real.iter().map(|m| k * m).collect();
        let hc_total = round_half_up(scaled.iter().sum());
        let hardcore = largest_remainder(&scaled, hc_total);
        debug_assert!(hardcore.iter().zip(&observed).all(|(h, n)| h <= n));
        Ok(Self {
            strata,
            aux_size,
            observed,
            alloc,
            k,
            hardcore,
        })
    }

    /// Design whose observed counts are taken from the stratum labels of
    /// `points`; `aux` gives the auxiliary size per stratum label.
    pub fn from_points(points: &PointSet, aux: &BTreeMap<u32, f64>) -> Result<Self> {
        let counts = points.stratum_counts()?;
        if let Some(s) = counts.keys().find(|s| !aux.contains_key(s)) {
            return Err(Error::Data(format!("no auxiliary size for stratum {s}")));
        }
        let strata: Vec<u32> = aux.keys().copied().collect();
        let aux_size = aux.values().copied().collect();
        let observed = strata
            .iter()
            .map(|s| counts.get(s).copied().unwrap_or(0))
            .collect();
        Self::new(strata, aux_size, observed)
    }

    pub fn n(&self) -> usize {
        self.observed.iter().sum()
    }

    pub fn ps_ratio(&self) -> Result<Vec<f64>> {
        ps_ratio(&self.alloc.real, &self.observed)
    }

    /// Per-stratum retained counts at intensity ζ.
    pub fn flexible_targets(&self, zeta: f64) -> Result<Vec<usize>> {
        flexible_targets(self, zeta)
    }

    pub fn targets_map(&self, zeta: f64) -> Result<BTreeMap<u32, usize>> {
        Ok(self
            .strata
            .iter()
            .copied()
            .zip(self.flexible_targets(zeta)?)
            .collect())
    }
}

pub fn flexible_targets(design: &StratifiedDesign, zeta: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::InvalidInput(format!("zeta = {zeta} outside [0, 1]")));
    }
    Ok(design
        .observed
        .iter()
        .zip(&design.hardcore)
        .map(|(&n, &h)| h.max(round_half_up((1.0 - zeta) * n as f64)).min(n))
        .collect())
}

/// Retained subset for one post-sampling draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSamplePlan {
    pub zeta: f64,
    pub targets: BTreeMap<u32, usize>,
    pub retained_ids: Vec<u64>,
    pub seed: u64,
}

/// Keeps exactly `targets[l]` points of each stratum, uniformly at random.
pub fn apply_postsample(
    points: &PointSet,
    targets: &BTreeMap<u32, usize>,
    seed: u64,
) -> Result<PointSet> {
    Ok(points.select(&postsample_indices(points, targets, seed)?))
}

/// Row indices retained by [`apply_postsample`], ascending.
pub fn postsample_indices(
    points: &PointSet,
    targets: &BTreeMap<u32, usize>,
    seed: u64,
) -> Result<Vec<usize>> {
    let present = points.stratum_counts()?;
    if let Some(s) = present.keys().find(|s| !targets.contains_key(s)) {
        return Err(Error::InvalidInput(format!("no target for stratum {s}")));
    }
    stratified_subsample_indices(points, targets, seed, tag::DELETION)
}

pub fn plan(
    points: &PointSet,
    design: &StratifiedDesign,
    zeta: f64,
    seed: u64,
) -> Result<PostSamplePlan> {
    let targets = design.targets_map(zeta)?;
    let kept = apply_postsample(points, &targets, seed)?;
    Ok(PostSamplePlan {
        zeta,
        targets,
        retained_ids: kept.ids().to_vec(),
        seed,
    })
}

/// Post-samples at intensity ζ, rebuilds W on the retained points and fits.
/// Returns the retained row indices with the fit.
#[allow(clippy::too_many_arguments)]
pub fn fit_postsampled(
    points: &PointSet,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    targets: &BTreeMap<u32, usize>,
    spec: &WeightSpec,
    options: &FitOptions,
    seed: u64,
) -> Result<(Vec<usize>, SlmFit)> {
    let keep = postsample_indices(points, targets, seed)?;
    let sub = points.select(&keep);
    let w = rebuild_for_subset(spec, &sub)?;
    let ys = DVector::from_iterator(keep.len(), keep.iter().map(|&i| y[i]));
    let xs = x.select_rows(&keep);
    let fit = fit_ml(&ys, &xs, &w, options)?;
    Ok((keep, fit))
}

/// Checks a ζ grid and returns it sorted ascending without duplicates.
pub fn validate_grid(grid: &[f64]) -> Result<Vec<f64>> {
    let mut g = grid.to_vec();
    if g.iter().any(|z| !(0.0..=1.0).contains(z)) {
        return Err(Error::InvalidInput(
            "zeta grid values must lie in [0, 1]".into(),
        ));
    }
    g.sort_by(f64::total_cmp);
    g.dedup();
    if g.len() < 2 || g[0] != 0.0 || *g.last().unwrap() != 1.0 {
        return Err(Error::InvalidInput(
            "zeta grid must contain at least two points including 0 and 1".into(),
        ));
    }
    Ok(g)
}

/// The default grid {0, 0.2, 0.4, 0.6, 0.8, 1}.
pub fn default_grid() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}

/// One row of a ζ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaPoint {
    pub zeta: f64,
    pub n: usize,
    pub beta_hat: f64,
    pub rho_hat: f64,
    pub avar_beta: f64,
    /// `|β̂_ζ − β̂₁|`.
    pub bias: f64,
    /// `(β̂_ζ − β̂₁)² + AVar(β̂)_ζ`.
    pub mse: f64,
    /// Replicate fits that succeeded / failed.
    pub fits: usize,
    pub failures: usize,
}

impl ZetaPoint {
    pub fn is_valid(&self) -> bool {
        self.fits > 0 && self.mse.is_finite()
    }

    pub fn relative_bias(&self, reference: f64) -> f64 {
        self.bias / reference.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaSweepResult {
    pub points: Vec<ZetaPoint>,
    /// Index into `points` of ζ̃.
    pub selected: usize,
    pub zeta_tilde: f64,
    pub beta_tilde: f64,
    /// β̂₁, the hard-core estimate.
    pub reference_beta: f64,
    pub warnings: Vec<String>,
}

/// Per-ζ estimates before scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaEstimate {
    pub zeta: f64,
    pub n: usize,
    pub beta_hat: f64,
    pub rho_hat: f64,
    pub avar_beta: f64,
    pub fits: usize,
    pub failures: usize,
}

/// Index of the smallest finite value; ties go to the earliest index.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some(b) if values[b] <= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Scores estimates against the ζ = 1 reference and picks ζ̃. Estimates must
/// be sorted by ζ and include ζ = 1 with at least one successful fit.
pub fn assemble_sweep(estimates: &[ZetaEstimate]) -> Result<ZetaSweepResult> {
    let reference = estimates
        .iter()
        .find(|e| e.zeta == 1.0 && e.fits > 0)
        .ok_or_else(|| {
            Error::Numerical("no successful fit at zeta = 1; bias reference missing".into())
        })?
        .beta_hat;
    let mut warnings = Vec::new();
    let points: Vec<ZetaPoint> = estimates
        .iter()
        .map(|e| {
            let (bias, mse) = if e.fits > 0 {
                let d = e.beta_hat - reference;
                (d.abs(), d * d + e.avar_beta)
            } else {
                (f64::NAN, f64::NAN)
            };
            ZetaPoint {
                zeta: e.zeta,
                n: e.n,
                beta_hat: e.beta_hat,
                rho_hat: e.rho_hat,
                avar_beta: e.avar_beta,
                bias,
                mse,
                fits: e.fits,
                failures: e.failures,
            }
        })
        .collect();
    for p in &points {
        if p.failures > 0 {
            let msg = if p.fits == 0 {
                format!(
                    "zeta = {}: all {} fit(s) failed; excluded from selection",
                    p.zeta, p.failures
                )
            } else {
                format!(
                    "zeta = {}: {} of {} fit(s) failed",
                    p.zeta,
                    p.failures,
                    p.failures + p.fits
                )
            };
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mses: Vec<f64> = points.iter().map(|p| p.mse).collect();
    let selected = argmin_first(&mses).expect("reference point has finite MSE");
    Ok(ZetaSweepResult {
        zeta_tilde: points[selected].zeta,
        beta_tilde: points[selected].beta_hat,
        reference_beta: reference,
        selected,
        points,
        warnings,
    })
}

/// Inputs to a ζ sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub spec: WeightSpec,
    pub grid: Vec<f64>,
    pub seed: u64,
    /// Independent deletions averaged per ζ.
    pub replicates: usize,
    pub fit: FitOptions,
    pub execution: Execution,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            spec: WeightSpec::threshold(),
            grid: default_grid(),
            seed: 0,
            replicates: 1,
            fit: FitOptions::default(),
            execution: Execution::Parallel,
        }
    }
}

/// Runs the ζ sweep: for each grid value, post-sample (averaging over
/// `replicates` deletions), refit, score, and select ζ̃. The coefficient
/// scored is the last column of `x`.
pub fn zeta_sweep(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    points: &PointSet,
    design: &StratifiedDesign,
    config: &SweepConfig,
) -> Result<ZetaSweepResult> {
    let grid = validate_grid(&config.grid)?;
    if config.replicates == 0 {
        return Err(Error::InvalidInput("replicates must be at least 1".into()));
    }
    if y.len() != points.len() || x.nrows() != points.len() {
        return Err(Error::InvalidInput(
            "y, X and points differ in length".into(),
        ));
    }
    let r = config.replicates;
    let targets: Vec<BTreeMap<u32, usize>> = grid
        .iter()
        .map(|&z| design.targets_map(z))
        .collect::<Result<_>>()?;

    let runs = config.execution.map(grid.len() * r, |job| {
        let (j, rep) = (job / r, job % r);
        let seed = rng::derive_seed(config.seed, &[tag::DELETION, j as u64, rep as u64]);
        fit_postsampled(points, y, x, &targets[j], &config.spec, &config.fit, seed)
            .map(|(_, fit)| (fit.slope(), fit.params.rho, fit.slope_avar()))
    });

    let mut estimates = Vec::with_capacity(grid.len());
    for (j, &zeta) in grid.iter().enumerate() {
        let mut sums = (0.0, 0.0, 0.0);
        let mut fits = 0;
        let mut failures = 0;
        for run in &runs[j * r..(j + 1) * r] {
            match run {
                Ok((b, rho, v)) => {
                    sums.0 += b;
                    sums.1 += rho;
                    sums.2 += v;
                    fits += 1;
                }
                Err(e) => {
                    log::warn!("zeta = {zeta}: fit failed: {e}");
                    failures += 1;
                }
            }
        }
        let m = fits.max(1) as f64;
        estimates.push(ZetaEstimate {
            zeta,
            n: targets[j].values().sum(),
            beta_hat: if fits > 0 { sums.0 / m } else { f64::NAN },
            rho_hat: if fits > 0 { sums.1 / m } else { f64::NAN },
            avar_beta: if fits > 0 { sums.2 / m } else { f64::NAN },
            fits,
            failures,
        });
    }
    assemble_sweep(&estimates)
}

impl ZetaSweepResult {
    /// `zeta,n,beta_hat,rho_hat,avar_beta,bias,mse,selected`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "zeta",
            "n",
            "beta_hat",
            "rho_hat",
            "avar_beta",
            "bias",
            "mse",
            "selected",
        ])?;
        for (i, p) in self.points.iter().enumerate() {
            w.write_record([
                fmt_f64(p.zeta),
                p.n.to_string(),
                fmt_f64(p.beta_hat),
                fmt_f64(p.rho_hat),
                fmt_f64(p.avar_beta),
                fmt_f64(p.bias),
                fmt_f64(p.mse),
                u8::from(i == self.selected).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
