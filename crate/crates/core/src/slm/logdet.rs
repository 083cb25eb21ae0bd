//! `ln |I − ρW|`, by two independent routes.
//!
//! - [`LogDetBackend::Eigen`]: `Σ ln(1 − ρλᵢ)` over the cached spectrum of W.
//!   One O(n³) decomposition per matrix, O(n) per ρ afterwards.
//! - [`LogDetBackend::SparseLu`]: an LU factorisation of `I − ρW` under a
//!   reverse Cuthill–McKee ordering, `Σ ln uᵢᵢ`.
//!
//! No pivoting is done in the LU. Every weight matrix built by this crate is
//! similar to a symmetric matrix `S`, and for admissible ρ the matrix
//! `I − ρS` is positive definite; by Cauchy interlacing every leading
//! principal minor of the (symmetrically permuted) `I − ρW` is then
//! positive, so all pivots are positive. A non-positive pivot means ρ is
//! outside the admissible region.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::SpatialWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogDetBackend {
    #[default]
    Eigen,
    SparseLu,
}

pub fn log_det(w: &SpatialWeights, rho: f64, backend: LogDetBackend) -> Result<f64> {
    if rho == 0.0 {
        return Ok(0.0);
    }
    match backend {
        LogDetBackend::Eigen => log_det_eigen(w.eigenvalues()?, rho),
        LogDetBackend::SparseLu => Ok(SparseLu::factor(w, rho)?.log_det()),
    }
}

/// `Σ ln(1 − ρλᵢ)`; fails if any factor is non-positive.
pub fn log_det_eigen(eigenvalues: &[f64], rho: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &l in eigenvalues {
        let f = 1.0 - rho * l;
        if f <= 0.0 {
            let lo = eigenvalues.first().copied().unwrap_or(0.0);
            let hi = eigenvalues.last().copied().unwrap_or(0.0);
            return Err(Error::RhoNotAdmissible {
                rho,
                lower: if lo < 0.0 {
                    1.0 / lo
                } else {
                    f64::NEG_INFINITY
                },
                upper: if hi > 0.0 { 1.0 / hi } else { f64::INFINITY },
            });
        }
        acc += f.ln();
    }
    Ok(acc)
}

/// Reverse Cuthill–McKee ordering of the (symmetrised) sparsity pattern.
/// `order[k]` is the original index placed at position k.
pub fn reverse_cuthill_mckee(w: &SpatialWeights) -> Vec<usize> {
    let n = w.n();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in w.entries() {
        adj[i].push(j);
        adj[j].push(i);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    for a in &mut adj {
        a.sort_by_key(|&j| (degree[j], j));
    }
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&i| (degree[i], i));
    for s in starts {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    order.reverse();
    order
}

/// LU factors of `P (I − ρW) Pᵀ` with unit lower-triangular L.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    /// `perm[k]` = original index at position k.
    perm: Vec<usize>,
    /// Strictly lower part of L, row-wise: `(col, value)`.
    lower: Vec<Vec<(usize, f64)>>,
    /// Diagonal of U.
    diag: Vec<f64>,
    /// Strictly upper part of U, row-wise.
    upper: Vec<Vec<(usize, f64)>>,
}

impl SparseLu {
    pub fn factor(w: &SpatialWeights, rho: f64) -> Result<Self> {
        let n = w.n();
        let perm = reverse_cuthill_mckee(w);
        let mut pos = vec![0usize; n];
        for (k, &i) in perm.iter().enumerate() {
            pos[i] = k;
        }
        let scale = 1.0 + rho.abs() * w.row_sums().iter().fold(0.0f64, |m, &s| m.max(s.abs()));

        let mut lower: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        let mut upper: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);

        let mut work = vec![0.0f64; n];
        let mut marked = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut heap: BinaryHeap<Reverse<usize>> = BinaryHeap::new();

        for k in 0..n {
            let orig = perm[k];
            let mut touch = |c: usize, heap: &mut BinaryHeap<Reverse<usize>>| {
                if !marked[c] {
                    marked[c] = true;
                    touched.push(c);
                    if c < k {
                        heap.push(Reverse(c));
                    }
                }
            };
            touch(k, &mut heap);
            work[k] = 1.0;
            for (j, v) in w.row(orig) {
                let c = pos[j];
                touch(c, &mut heap);
                work[c] -= rho * v;
            }
            let mut lrow = Vec::new();
            while let Some(Reverse(j)) = heap.pop() {
                let v = work[j];
                if v == 0.0 {
                    continue;
                }
                let l = v / diag[j];
                lrow.push((j, l));
                for &(c, u) in &upper[j] {
                    touch(c, &mut heap);
                    work[c] -= l * u;
                }
            }
            let pivot = work[k];
            if !(pivot > 1e-13 * scale) {
                return Err(if pivot.abs() <= 1e-13 * scale || !pivot.is_finite() {
                    Error::Singular { row: orig, pivot }
                } else {
                    Error::RhoNotAdmissible {
                        rho,
                        lower: f64::NAN,
                        upper: f64::NAN,
                    }
                });
            }
            let mut urow: Vec<(usize, f64)> = touched
                .iter()
                .copied()
                .filter(|&c| c > k && work[c] != 0.0)
                .map(|c| (c, work[c]))
                .collect();
            urow.sort_unstable_by_key(|e| e.0);
            for &c in &touched {
                work[c] = 0.0;
                marked[c] = false;
            }
            touched.clear();
            lower.push(lrow);
            diag.push(pivot);
            upper.push(urow);
        }
        Ok(Self {
            n,
            perm,
            lower,
            diag,
            upper,
        })
    }

    pub fn log_det(&self) -> f64 {
        self.diag.iter().map(|d| d.ln()).sum()
    }

    /// Solves `(I − ρW) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut z: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for k in 0..self.n {
            let s: f64 = self.lower[k].iter().map(|&(j, l)| l * z[j]).sum();
            z[k] -= s;
        }
        for k in (0..self.n).rev() {
            let s: f64 = self.upper[k].iter().map(|&(j, u)| u * z[j]).sum();
            z[k] = (z[k] - s) / self.diag[k];
        }
        let mut x = vec![0.0; self.n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = z[k];
        }
        x
    }

    /// Fill of the factors, for diagnostics.
    pub fn nnz(&self) -> usize {
        self.n
            + self.lower.iter().map(Vec::len).sum::<usize>()
            + self.upper.iter().map(Vec::len).sum::<usize>()
    }
}
