//! Sparse spatial weight matrices.
//!
//! Three neighbourhood schemes are supported: binary distance threshold,
//! binary k-nearest neighbours (symmetrised by union) and inverse distance.
//! Distances are Euclidean in the planar coordinates of the point set.
//!
//! All three schemes start from a symmetric matrix `A`. Row standardisation
//! gives `W = D⁻¹A` with `D` the row sums, which is similar to the symmetric
//! `D^{-1/2} A D^{-1/2}`; the matrix remembers `D` so its spectrum can be
//! computed with a symmetric eigensolver.

use std::cmp::Ordering;
use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

/// Margin kept between ρ and the singular points 1/λ of the weight matrix.
pub const RHO_MARGIN: f64 = 1e-6;

/// How the threshold distance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdRule {
    /// Smallest distance leaving no isolated point, recomputed for every
    /// point set the scheme is applied to.
    MinConnecting,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightScheme {
    Threshold(ThresholdRule),
    Knn { k: usize },
    InverseDistance,
}

impl WeightScheme {
    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Threshold(_) => "threshold",
            WeightScheme::Knn { .. } => "knn",
            WeightScheme::InverseDistance => "idist",
        }
    }
}

/// A scheme plus the standardisation flag: everything needed to rebuild a
/// weight matrix on a different point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub scheme: WeightScheme,
    pub row_standardize: bool,
}

impl WeightSpec {
    pub fn threshold() -> Self {
        Self {
            scheme: WeightScheme::Threshold(ThresholdRule::MinConnecting),
            row_standardize: true,
        }
    }

    pub fn knn(k: usize) -> Self {
        Self {
            scheme: WeightScheme::Knn { k },
            row_standardize: true,
        }
    }

    pub fn inverse_distance() -> Self {
        Self {
            scheme: WeightScheme::InverseDistance,
            row_standardize: true,
        }
    }

    /// Parses `threshold`, `threshold:<d>`, `knn`, `knn:<k>` (default k = 4)
    /// or `idist`; the result is row-standardised.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unknown weight scheme '{text}'"));
        let (name, arg) = match text.trim().split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (text.trim(), None),
        };
        match (name, arg) {
            ("threshold", None) => Ok(Self::threshold()),
            ("threshold", Some(d)) => {
                let d: f64 = d.parse().map_err(|_| bad())?;
                if !(d.is_finite() && d > 0.0) {
                    return Err(bad());
                }
                Ok(Self {
                    scheme: WeightScheme::Threshold(ThresholdRule::Fixed(d)),
                    row_standardize: true,
                })
            }
            ("knn", None) => Ok(Self::knn(4)),
            ("knn", Some(k)) => match k.parse::<usize>() {
                Ok(k) if k > 0 => Ok(Self::knn(k)),
                _ => Err(bad()),
            },
            ("idist", None) => Ok(Self::inverse_distance()),
            _ => Err(bad()),
        }
    }

    /// Inverse of [`WeightSpec::parse`], ignoring standardisation.
    pub fn label(&self) -> String {
        match self.scheme {
            WeightScheme::Threshold(ThresholdRule::MinConnecting) => "threshold".into(),
            WeightScheme::Threshold(ThresholdRule::Fixed(d)) => format!("threshold:{d}"),
            WeightScheme::Knn { k } => format!("knn:{k}"),
            WeightScheme::InverseDistance => "idist".into(),
        }
    }

    pub fn build(&self, points: &PointSet) -> Result<SpatialWeights> {
        let raw = match self.scheme {
            WeightScheme::Threshold(ThresholdRule::Fixed(d)) => build_threshold(points, d)?,
            WeightScheme::Threshold(ThresholdRule::MinConnecting) => {
                let d = min_connecting_threshold(points)?;
                build_threshold(points, d)?
            }
            WeightScheme::Knn { k } => build_knn(points, k)?,
            WeightScheme::InverseDistance => build_inverse_distance(points)?,
        };
        Ok(if self.row_standardize {
            row_standardize(&raw)
        } else {
            raw
        })
    }
}

/// Rebuilds the weight matrix from scratch on a retained subset of points.
/// With [`ThresholdRule::MinConnecting`] the threshold is re-derived for the
/// subset, so the no-isolated-point guarantee carries over.
pub fn rebuild_for_subset(spec: &WeightSpec, retained: &PointSet) -> Result<SpatialWeights> {
    if retained.is_empty() {
        return Err(Error::InvalidInput(
            "cannot build weights on an empty point set".into(),
        ));
    }
    spec.build(retained)
}

/// Sparse nonnegative n×n matrix with zero diagonal, stored by rows.
#[derive(Debug)]
pub struct SpatialWeights {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    scheme: WeightScheme,
    /// Realised threshold for the threshold scheme.
    threshold: Option<f64>,
    row_standardized: bool,
    /// `d` such that `diag(d)^{1/2} W diag(d)^{-1/2}` is symmetric.
    sym_scale: Option<Vec<f64>>,
    warnings: Vec<String>,
    eigenvalues: OnceLock<std::result::Result<Vec<f64>, String>>,
}

impl Clone for SpatialWeights {
    fn clone(&self) -> Self {
        let eigenvalues = OnceLock::new();
        if let Some(v) = self.eigenvalues.get() {
            let _ = eigenvalues.set(v.clone());
        }
        Self {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.clone(),
            scheme: self.scheme,
            threshold: self.threshold,
            row_standardized: self.row_standardized,
            sym_scale: self.sym_scale.clone(),
            warnings: self.warnings.clone(),
            eigenvalues,
        }
    }
}

impl PartialEq for SpatialWeights {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.row_ptr == other.row_ptr
            && self.cols == other.cols
            && self.vals == other.vals
            && self.scheme == other.scheme
            && self.row_standardized == other.row_standardized
    }
}

impl SpatialWeights {
    /// Builds from `(row, col, weight)` triplets. Diagonal entries and
    /// non-positive or non-finite weights are rejected.
    pub fn from_triplets(
        n: usize,
        mut triplets: Vec<(usize, usize, f64)>,
        scheme: WeightScheme,
    ) -> Result<Self> {
        for &(i, j, w) in &triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) outside a {n}x{n} matrix"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("diagonal entry at {i}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "weight {w} at ({i}, {j}) is not strictly positive"
                )));
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        triplets.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let mut row_ptr = vec![0; n + 1];
        for &(i, _, _) in &triplets {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = triplets.iter().map(|t| t.1).collect();
        let vals = triplets.iter().map(|t| t.2).collect();
        let mut w = Self {
            n,
            row_ptr,
            cols,
            vals,
            scheme,
            threshold: None,
            row_standardized: false,
            sym_scale: None,
            warnings: Vec::new(),
            eigenvalues: OnceLock::new(),
        };
        if w.is_symmetric(0.0) {
            w.sym_scale = Some(vec![1.0; n]);
        }
        Ok(w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Fraction of nonzero cells, nnz / n².
    pub fn density(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.n * self.n) as f64
        }
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `(col, weight)` pairs of row `i`, in column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// All `(row, col, weight)` entries sorted by `(row, col)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, w)| w).sum())
            .collect()
    }

    pub fn isolated_points(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.degree(i) == 0).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.entries()
            .all(|(i, j, w)| (self.get(j, i) - w).abs() <= tol * w.abs().max(1.0))
    }

    /// `W v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "vector length must equal matrix order");
        (0..self.n)
            .map(|i| self.row(i).map(|(j, w)| w * v[j]).sum())
            .collect()
    }

    pub fn mul_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.matvec(v.as_slice()))
    }

    /// `W M` for a dense `M` with `n` rows.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, m.ncols());
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                for c in 0..m.ncols() {
                    out[(i, c)] += w * m[(j, c)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.entries() {
            m[(i, j)] = w;
        }
        m
    }

    /// Writes `i j w` triples, 0-based, sorted by `(i, j)`.
    pub fn write_coo<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, j, w) in self.entries() {
            writeln!(out, "{i} {j} {w:?}")?;
        }
        Ok(())
    }

    /// Eigenvalues in ascending order, computed once and cached. Safe to call
    /// from several threads.
    pub fn eigenvalues(&self) -> Result<&[f64]> {
        self.eigenvalues
            .get_or_init(|| self.compute_eigenvalues())
            .as_deref()
            .map_err(|e| Error::Numerical(e.clone()))
    }

    fn compute_eigenvalues(&self) -> std::result::Result<Vec<f64>, String> {
        let mut ev: Vec<f64> = match &self.sym_scale {
            Some(d) => {
                let sq: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
                let mut s = DMatrix::zeros(self.n, self.n);
                for (i, j, w) in self.entries() {
                    s[(i, j)] = w * sq[i] / sq[j];
                }
                // Exact symmetry for the solver.
                let s = (&s + s.transpose()) * 0.5;
                s.symmetric_eigenvalues().iter().copied().collect()
            }
            None => {
                let ev = self.to_dense().complex_eigenvalues();
                let scale = ev.iter().map(|z| z.norm()).fold(1.0, f64::max);
                if ev.iter().any(|z| z.im.abs() > 1e-10 * scale) {
                    return Err("weight matrix has a complex spectrum".into());
                }
                ev.iter().map(|z| z.re).collect()
            }
        };
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        Ok(ev)
    }

    /// Smallest and largest real eigenvalue.
    pub fn spectral_bounds(&self) -> Result<(f64, f64)> {
        let ev = self.eigenvalues()?;
        match (ev.first(), ev.last()) {
            (Some(&lo), Some(&hi)) => Ok((lo, hi)),
            _ => Err(Error::InvalidInput("empty weight matrix".into())),
        }
    }

    /// Admissible ρ interval `(1/λ_min, 1/λ_max)` shrunk by [`RHO_MARGIN`].
    pub fn rho_interval(&self) -> Result<(f64, f64)> {
        let (lo, hi) = self.spectral_bounds()?;
        let lower = if lo < 0.0 {
            1.0 / lo + RHO_MARGIN
        } else {
            -1.0 + RHO_MARGIN
        };
        let upper = if hi > 0.0 {
            1.0 / hi - RHO_MARGIN
        } else {
            1.0 - RHO_MARGIN
        };
        Ok((lower, upper))
    }

    /// Checks that ρ lies in the admissible interval.
    pub fn check_rho(&self, rho: f64) -> Result<()> {
        if rho == 0.0 {
            return Ok(());
        }
        let (lo, hi) = self.spectral_bounds()?;
        let bad =
            (lo < 0.0 && rho * lo >= 1.0) || (hi > 0.0 && rho * hi >= 1.0) || !rho.is_finite();
        if bad {
            let lower = if lo < 0.0 {
                1.0 / lo
            } else {
                f64::NEG_INFINITY
            };
            let upper = if hi > 0.0 { 1.0 / hi } else { f64::INFINITY };
            return Err(Error::RhoNotAdmissible { rho, lower, upper });
        }
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_no_duplicates(points: &PointSet) -> Result<()> {
    let c = points.coords();
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| {
        c[a][0]
            .total_cmp(&c[b][0])
            .then(c[a][1].total_cmp(&c[b][1]))
    });
    for w in order.windows(2) {
        if c[w[0]] == c[w[1]] {
            let (a, b) = (points.ids()[w[0]], points.ids()[w[1]]);
            return Err(Error::DuplicateCoordinates {
                first: a.min(b),
                second: a.max(b),
            });
        }
    }
    Ok(())
}

/// Largest nearest-neighbour distance: the smallest threshold for which no
/// point is isolated.
pub fn min_connecting_threshold(points: &PointSet) -> Result<f64> {
    let c = points.coords();
    let n = c.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "need at least two points for a connecting threshold".into(),
        ));
    }
    check_no_duplicates(points)?;
    let mut worst = 0.0f64;
    for i in 0..n {
        let nearest = (0..n)
            .filter(|&j| j != i)
            .map(|j| dist(c[i], c[j]))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    Ok(worst)
}

/// Binary weights for pairs at Euclidean distance ≤ `threshold`. A threshold
/// that leaves points isolated is accepted with a warning.
pub fn build_threshold(points: &PointSet, threshold: f64) -> Result<SpatialWeights> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "threshold must be a nonnegative number, got {threshold}"
        )));
    }
    let c = points.coords();
    let n = c.len();
    let mut trip = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && dist(c[i], c[j]) <= threshold {
                trip.push((i, j, 1.0));
            }
        }
    }
    let mut w = SpatialWeights::from_triplets(
        n,
        trip,
        WeightScheme::Threshold(ThresholdRule::Fixed(threshold)),
    )?;
    w.threshold = Some(threshold);
    let isolated = w.isolated_points();
    if !isolated.is_empty() {
        let msg = format!(
            "threshold {threshold} leaves {} isolated point(s)",
            isolated.len()
        );
        log::warn!("{msg}");
        w.warnings.push(msg);
    }
    Ok(w)
}

/// Binary k-nearest-neighbour weights, symmetrised by union: i ~ j when
/// either is among the other's k nearest. Equal distances are resolved in
/// favour of the lower point id.
pub fn build_knn(points: &PointSet, k: usize) -> Result<SpatialWeights> {
    let c = points.coords();
    let ids = points.ids();
    let n = c.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!(
            "k = {k} must satisfy 0 < k < n = {n}"
        )));
    }
    check_no_duplicates(points)?;
    let mut trip = Vec::with_capacity(2 * k * n);
    for i in 0..n {
        let mut cand: Vec<(f64, u64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist(c[i], c[j]), ids[j], j))
            .collect();
        let cmp =
            |a: &(f64, u64, usize), b: &(f64, u64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        cand.select_nth_unstable_by(k - 1, cmp);
        for &(_, _, j) in &cand[..k] {
            trip.push((i, j, 1.0));
            trip.push((j, i, 1.0));
        }
    }
    SpatialWeights::from_triplets(n, trip, WeightScheme::Knn { k })
}

/// Directed k-NN out-neighbours of every point, before symmetrisation.
pub fn knn_directed(points: &PointSet, k: usize) -> Result<Vec<Vec<usize>>> {
    let c = points.coords();
    let ids = points.ids();
    let n = c.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!(
            "k = {k} must satisfy 0 < k < n = {n}"
        )));
    }
    Ok((0..n)
        .map(|i| {
            let mut cand: Vec<(f64, u64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist(c[i], c[j]), ids[j], j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand[..k].iter().map(|t| t.2).collect()
        })
        .collect())
}

/// `w_ij = 1 / d(i, j)` for every pair i ≠ j.
pub fn build_inverse_distance(points: &PointSet) -> Result<SpatialWeights> {
    check_no_duplicates(points)?;
    let c = points.coords();
    let n = c.len();
    let mut trip = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                trip.push((i, j, 1.0 / dist(c[i], c[j])));
            }
        }
    }
    SpatialWeights::from_triplets(n, trip, WeightScheme::InverseDistance)
}

/// Divides each nonempty row by its sum. Empty rows stay empty and are
/// reported in the warnings.
pub fn row_standardize(w: &SpatialWeights) -> SpatialWeights {
    let sums = w.row_sums();
    let vals = (0..w.n)
        .flat_map(|i| {
            let s = sums[i];
            w.row(i).map(move |(_, v)| v / s)
        })
        .collect();
    let mut warnings = w.warnings.clone();
    let empty = sums.iter().filter(|&&s| s == 0.0).count();
    if empty > 0 {
        let msg = format!("{empty} empty row(s) left unstandardised");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    // W' = diag(s)^-1 W; if diag(d)^½ W diag(d)^-½ is symmetric then so is
    // diag(d s)^½ W' diag(d s)^-½.
    let sym_scale = w.sym_scale.as_ref().map(|d| {
        d.iter()
            .zip(&sums)
            .map(|(&d, &s)| if s > 0.0 { d * s } else { d })
            .collect()
    });
    SpatialWeights {
        n: w.n,
        row_ptr: w.row_ptr.clone(),
        cols: w.cols.clone(),
        vals,
        scheme: w.scheme,
        threshold: w.threshold,
        row_standardized: true,
        sym_scale,
        warnings,
        eigenvalues: OnceLock::new(),
    }
}
