//! Monte Carlo harness for the bias / variance / MSE behaviour of
//! post-sampled SLM estimates.
//!
//! One experiment fixes a quadrant population, a convenience sample drawn
//! from it and the regressor `x ~ N(μ, σ²ₓ)` on the sample points, rescaled
//! so that every quadrant has sample mean μ and variance σ²ₓ exactly. Each
//! replication then draws fresh innovations, generates `y` on the sample,
//! post-samples at every ζ of the grid and refits. Estimates are
//! aggregated per `(scheme, ρ, ζ)`.
//!
//! Convenience sampling only biases the slope when the slope differs
//! between strata. The generator therefore lets each quadrant carry a slope
//! offset `δ_l` acting on the centred regressor,
//!
//! ```text
//! y = (I − ρW₀)⁻¹ (β x + δ_l (x − μ) + σ ε),
//! ```
//!
//! and the target of estimation is the population-weighted mean slope
//! `β + Σ N_l δ_l / N`. With the default offsets this mean equals `β`.
//! `W₀` is the generating weight matrix on the full convenience sample: by
//! default a fixed-radius threshold matrix, so the process does not depend
//! on how isolated the sample's loneliest point happens to be. Estimation
//! rebuilds its own W on every retained subset and fits with an intercept.
//!
//! Random streams: the population, sample and regressor come from the base
//! seed; innovations of replication r come from stream `(NOISE, r)` and the
//! deletions at grid index j from `(DELETION, j, r)`. Neither depends on the
//! weight scheme or on ρ, so every cell shares common random numbers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{
    convenience_sample, fmt_f64, generate_quadrant_population, quadrant_counts, PointSet,
};
use crate::postsample::{postsample_indices, StratifiedDesign};
use crate::rng::{self, tag};
use crate::slm::{fit_ml, FitOptions, SpatialFilter};
use crate::weights::{rebuild_for_subset, SpatialWeights, ThresholdRule, WeightScheme, WeightSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub population: [usize; 4],
    pub sample: [usize; 4],
    pub beta: f64,
    pub sigma2: f64,
    /// Per-quadrant slope offsets δ_l.
    pub slope_offsets: [f64; 4],
    pub rho_grid: Vec<f64>,
    pub zeta_grid: Vec<f64>,
    pub schemes: Vec<WeightSpec>,
    /// Weights of the generating process; `None` uses each estimation scheme
    /// on the full sample.
    pub dgp_weights: Option<WeightSpec>,
    pub replications: usize,
    pub seed: u64,
    pub x_mean: f64,
    pub x_var: f64,
    pub fit: FitOptions,
    /// Does not affect results, so it is left out of manifests.
    #[serde(skip)]
    pub execution: Execution,
}

/// Default slope offsets: steeper in Q1, flatter in Q4, zero mean under the
/// population weights of both reference designs. Q1 is under-represented at every ζ < 1
/// and Q4 most of all at ζ = 0, so the convenience bias is positive and
/// fades as ζ grows.
pub const DEFAULT_OFFSETS: [f64; 4] = [0.84, 0.0, 0.0, -0.70];

/// Interaction radius of the default generating process.
pub const DEFAULT_DGP_THRESHOLD: f64 = 0.2;

impl Default for McConfig {
    fn default() -> Self {
        Self::sim1()
    }
}

impl McConfig {
    /// Populations (2000, 200, 1000, 2400), convenience counts (70, 20, 150, 30).
    pub fn sim1() -> Self {
        Self {
            population: [2000, 200, 1000, 2400],
            sample: [70, 20, 150, 30],
            beta: 1.0,
            sigma2: 1.0,
            slope_offsets: DEFAULT_OFFSETS,
            rho_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            zeta_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            schemes: vec![WeightSpec::threshold()],
            dgp_weights: Some(WeightSpec {
                scheme: WeightScheme::Threshold(ThresholdRule::Fixed(DEFAULT_DGP_THRESHOLD)),
                row_standardize: true,
            }),
            replications: 500,
            seed: 1,
            x_mean: 10.0,
            x_var: 1.0,
            fit: FitOptions {
                intercept: true,
                ..FitOptions::default()
            },
            execution: Execution::default(),
        }
    }

    /// The reference design with every population count doubled.
    pub fn sim2() -> Self {
        Self {
            population: [4000, 400, 2000, 4800],
            ..Self::sim1()
        }
    }

    /// The population-weighted mean slope that estimates are scored against.
    pub fn target_beta(&self) -> f64 {
        let total: usize = self.population.iter().sum();
        let shift: f64 = self
            .population
            .iter()
            .zip(&self.slope_offsets)
            .map(|(&n, d)| n as f64 * d)
            .sum::<f64>()
            / total as f64;
        self.beta + shift
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.rho_grid.is_empty() || self.zeta_grid.is_empty() {
            return bad("rho and zeta grids must be nonempty");
        }
        if self.schemes.is_empty() {
            return bad("at least one weight scheme is required");
        }
        if self.zeta_grid.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return bad("zeta grid values must lie in [0, 1]");
        }
        if self.rho_grid.iter().any(|r| !r.is_finite()) {
            return bad("rho grid values must be finite");
        }
        if !(self.sigma2 > 0.0 && self.x_var >= 0.0) {
            return bad("sigma2 must be positive and x_var nonnegative");
        }
        if self.sample.iter().zip(&self.population).any(|(s, p)| s > p) {
            return bad("sample counts exceed population counts");
        }
        Ok(())
    }

    /// Sets one field from its key-value representation. List values are
    /// comma separated; `schemes` takes labels such as `threshold,knn:4,idist`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let err = |what: &str| Error::InvalidInput(format!("bad value for {key}: {what}"));
        let num = |s: &str| -> Result<f64> { s.trim().parse::<f64>().map_err(|_| err(s)) };
        let list = |s: &str| -> Result<Vec<f64>> { s.split(',').map(num).collect() };
        let four = |s: &str| -> Result<[f64; 4]> {
            list(s)?.try_into().map_err(|_| err("expected 4 values"))
        };
        let counts = |s: &str| -> Result<[usize; 4]> {
            let v: Vec<usize> = s
                .split(',')
                .map(|c| c.trim().parse::<usize>().map_err(|_| err(c)))
                .collect::<Result<_>>()?;
            v.try_into().map_err(|_| err("expected 4 counts"))
        };
        match key.trim() {
            "population" => self.population = counts(v)?,
            "sample" => self.sample = counts(v)?,
            "beta" => self.beta = num(v)?,
            "sigma2" => self.sigma2 = num(v)?,
            "slope_offsets" => self.slope_offsets = four(v)?,
            "rho_grid" => self.rho_grid = list(v)?,
            "zeta_grid" => self.zeta_grid = list(v)?,
            "schemes" => {
                let rs = self.schemes.first().is_none_or(|s| s.row_standardize);
                self.schemes = v
                    .split(',')
                    .map(|s| {
                        WeightSpec::parse(s).map(|mut w| {
                            w.row_standardize = rs;
                            w
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "row_standardize" => {
                let on = match v {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    _ => return Err(err(v)),
                };
                for s in &mut self.schemes {
                    s.row_standardize = on;
                }
            }
            "dgp_weights" => {
                self.dgp_weights = match v {
                    "none" | "" => None,
                    s => Some(WeightSpec::parse(s)?),
                }
            }
            "replications" => self.replications = v.parse().map_err(|_| err(v))?,
            "seed" => self.seed = v.parse().map_err(|_| err(v))?,
            "x_mean" => self.x_mean = num(v)?,
            "x_var" => self.x_var = num(v)?,
            "intercept" => self.fit.intercept = matches!(v, "on" | "true" | "1"),
            "execution" => {
                self.execution = match v {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => return Err(err(v)),
                }
            }
            other => return Err(Error::InvalidInput(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines over the defaults of `base`. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse_kv(text: &str, base: Self) -> Result<Self> {
        let mut cfg = base;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k, v).map_err(|e| match e {
                Error::InvalidInput(m) => Error::InvalidInput(format!("line {}: {m}", lineno + 1)),
                e => e,
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_kv(&std::fs::read_to_string(path)?, Self::sim1())
    }
}

/// Aggregate over replications for one `(scheme, ρ, ζ)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub scheme: String,
    pub rho: f64,
    pub zeta: f64,
    /// Mean estimate minus the target slope.
    pub bias: f64,
    pub bias2: f64,
    /// Variance with divisor R, so that `mse = bias2 + variance`.
    pub variance: f64,
    pub mse: f64,
    pub mean_n: f64,
    /// Successful replications.
    pub reps: usize,
    pub se_bias2: f64,
    pub se_var: f64,
    pub failures: usize,
}

impl McRow {
    /// Summarises estimates `b` against `target`.
    pub fn from_estimates(
        scheme: &str,
        rho: f64,
        zeta: f64,
        b: &[f64],
        target: f64,
        mean_n: f64,
        failures: usize,
    ) -> Self {
        let r = b.len();
        let (bias, variance, m4) = if r == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let rf = r as f64;
            let mean = b.iter().sum::<f64>() / rf;
            let var = b.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rf;
            let m4 = b.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / rf;
            (mean - target, var, m4)
        };
        let rf = r as f64;
        let bias2 = bias * bias;
        Self {
            scheme: scheme.to_string(),
            rho,
            zeta,
            bias,
            bias2,
            variance,
            mse: bias2 + variance,
            mean_n,
            reps: r,
            se_bias2: ((2.0 * bias).powi(2) * variance / rf
                + 2.0 * variance * variance / (rf * rf))
                .sqrt(),
            se_var: ((m4 - variance * variance).max(0.0) / rf).sqrt(),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    /// Ordered by scheme (config order), then ρ, then ζ.
    pub rows: Vec<McRow>,
    pub target_beta: f64,
    pub warnings: Vec<String>,
}

impl McSummary {
    pub fn row(&self, scheme: &str, rho: f64, zeta: f64) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.rho == rho && r.zeta == zeta)
    }

    pub fn total_failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }
}

/// The fixed part of an experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub population: PointSet,
    pub sample: PointSet,
    pub x: DMatrix<f64>,
    /// `β x_i + δ_l(i) (x_i − μ)`, the systematic part before the spatial filter.
    pub signal: Vec<f64>,
    pub design: StratifiedDesign,
}

pub fn setup(config: &McConfig) -> Result<Setup> {
    config.validate()?;
    let population = generate_quadrant_population(
        config.population,
        rng::derive_seed(config.seed, &[tag::POPULATION]),
    );
    let sample = convenience_sample(
        &population,
        &quadrant_counts(config.sample),
        rng::derive_seed(config.seed, &[tag::CONVENIENCE]),
    )?;
    let n = sample.len();
    let normal = Normal::new(config.x_mean, config.x_var.sqrt())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut xr = rng::stream(config.seed, &[tag::REGRESSOR]);
    let mut xs: Vec<f64> = (0..n).map(|_| normal.sample(&mut xr)).collect();
    let strata = sample.strata().expect("quadrant labels");
    standardize_within(&mut xs, strata, config.x_mean, config.x_var.sqrt());
    let signal = xs
        .iter()
        .zip(strata)
        .map(|(x, &q)| config.beta * x + config.slope_offsets[q as usize - 1] * (x - config.x_mean))
        .collect();
    let aux: BTreeMap<u32, f64> = (1..=4u32)
        .map(|q| (q, config.population[q as usize - 1] as f64))
        .collect();
    let design = StratifiedDesign::from_points(&sample, &aux)?;
    let x = DMatrix::from_column_slice(n, 1, &xs);
    Ok(Setup {
        population,
        sample,
        x,
        signal,
        design,
    })
}

/// Rescales `values` affinely within each stratum to the given sample mean
/// and standard deviation (divisor n). Single-point strata are set to `mean`.
pub fn standardize_within(values: &mut [f64], strata: &[u32], mean: f64, sd: f64) {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    for idx in groups.values() {
        let m = idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64;
        let v = idx.iter().map(|&i| (values[i] - m).powi(2)).sum::<f64>() / idx.len() as f64;
        let scale = if v > 0.0 { sd / v.sqrt() } else { 0.0 };
        for &i in idx {
            values[i] = mean + (values[i] - m) * scale;
        }
    }
}

/// One draw from the generating process: the convenience sample with the
/// regressor as attribute `covariate` and the response of replication `rep`
/// at `rho` as `outcome`. The generating W is `dgp_weights`, or the first
/// estimation scheme when that is unset.
pub fn simulate_dataset(config: &McConfig, rho: f64, rep: usize) -> Result<PointSet> {
    let s = setup(config)?;
    let dgp = match (&config.dgp_weights, config.schemes.first()) {
        (Some(d), _) | (None, Some(d)) => d.build(&s.sample)?,
        (None, None) => return Err(Error::InvalidInput("no weight scheme configured".into())),
    };
    dgp.check_rho(rho)?;
    let filter = SpatialFilter::new(&dgp, rho)?;
    let sigma = config.sigma2.sqrt();
    let mut nr = rng::stream(config.seed, &[tag::NOISE, rep as u64]);
    let shock: Vec<f64> = s
        .signal
        .iter()
        .map(|m| {
            let e: f64 = StandardNormal.sample(&mut nr);
            m + sigma * e
        })
        .collect();
    let y = filter.apply(&shock);
    s.sample
        .with_attr("covariate", s.x.column(0).iter().copied().collect())?
        .with_attr("outcome", y)
}

struct SchemeState {
    /// Estimation weights on the full sample.
    w: SpatialWeights,
    filters: Vec<Result<SpatialFilter>>,
}

/// Runs every `(scheme, ρ, ζ)` cell of the configuration.
pub fn run_experiment(config: &McConfig) -> Result<McSummary> {
    let s = setup(config)?;
    let n = s.sample.len();
    let sigma = config.sigma2.sqrt();
    let nz = config.zeta_grid.len();
    let nr = config.rho_grid.len();
    let reps = config.replications;

    let states: Vec<SchemeState> = config
        .schemes
        .iter()
        .map(|spec| {
            let w = spec.build(&s.sample)?;
            w.eigenvalues()?;
            let dgp = match &config.dgp_weights {
                Some(d) => d.build(&s.sample)?,
                None => w.clone(),
            };
            let filters = config
                .rho_grid
                .iter()
                .map(|&rho| {
                    dgp.check_rho(rho)?;
                    SpatialFilter::new(&dgp, rho)
                })
                .collect();
            Ok(SchemeState { w, filters })
        })
        .collect::<Result<_>>()?;

    let targets: Vec<BTreeMap<u32, usize>> = config
        .zeta_grid
        .iter()
        .map(|&z| s.design.targets_map(z))
        .collect::<Result<_>>()?;

    // job = ((scheme · nz) + zeta) · reps + rep; each yields one estimate per ρ.
    let jobs = config.schemes.len() * nz * reps;
    let results: Vec<Vec<Option<f64>>> = config.execution.map(jobs, |job| {
        let rep = job % reps;
        let j = (job / reps) % nz;
        let si = job / (reps * nz);
        let state = &states[si];
        let mut nr_ = rng::stream(config.seed, &[tag::NOISE, rep as u64]);
        let shock: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut nr_);
                s.signal[i] + sigma * e
            })
            .collect();
        let seed = rng::derive_seed(config.seed, &[tag::DELETION, j as u64, rep as u64]);
        let keep = match postsample_indices(&s.sample, &targets[j], seed) {
            Ok(k) => k,
            Err(_) => return vec![None; nr],
        };
        let w = if keep.len() == n {
            state.w.clone()
        } else {
            match rebuild_for_subset(&config.schemes[si], &s.sample.select(&keep)) {
                Ok(w) => w,
                Err(_) => return vec![None; nr],
            }
        };
        let xs = s.x.select_rows(&keep);
        state
            .filters
            .iter()
            .map(|f| {
                let f = f.as_ref().ok()?;
                let y = f.apply(&shock);
                let ys = DVector::from_iterator(keep.len(), keep.iter().map(|&i| y[i]));
                fit_ml(&ys, &xs, &w, &config.fit)
                    .ok()
                    .map(|fit| fit.slope())
            })
            .collect()
    });

    let target = config.target_beta();
    let mut rows = Vec::with_capacity(config.schemes.len() * nr * nz);
    let mut warnings = Vec::new();
    for (si, spec) in config.schemes.iter().enumerate() {
        let name = spec.scheme.name();
        for (ri, &rho) in config.rho_grid.iter().enumerate() {
            if let Err(e) = &states[si].filters[ri] {
                let msg = format!("{name}, rho = {rho}: {e}");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            for (j, &zeta) in config.zeta_grid.iter().enumerate() {
                let base = (si * nz + j) * reps;
                let est: Vec<f64> = (0..reps).filter_map(|r| results[base + r][ri]).collect();
                let failures = reps - est.len();
                if failures * 100 > reps {
                    let msg = format!(
                        "{name}, rho = {rho}, zeta = {zeta}: {failures} of {reps} fits failed"
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                let mean_n = targets[j].values().sum::<usize>() as f64;
                rows.push(McRow::from_estimates(
                    name, rho, zeta, &est, target, mean_n, failures,
                ));
            }
        }
    }
    Ok(McSummary {
        rows,
        target_beta: target,
        warnings,
    })
}

/// Threshold, 4-nearest-neighbour and inverse-distance weights at ρ = 0.2
/// on common random numbers.
pub fn compare_weight_schemes(config: &McConfig) -> Result<McSummary> {
    let rs = config.schemes.first().is_none_or(|s| s.row_standardize);
    let mut cfg = config.clone();
    cfg.schemes = [
        WeightSpec::threshold(),
        WeightSpec::knn(4),
        WeightSpec::inverse_distance(),
    ]
    .into_iter()
    .map(|mut s| {
        s.row_standardize = rs;
        s
    })
    .collect();
    cfg.rho_grid = vec![0.2];
    run_experiment(&cfg)
}

pub const CURVES_HEADER: [&str; 10] = [
    "scheme", "rho", "zeta", "bias2", "variance", "mse", "mean_n", "reps", "se_bias2", "se_var",
];

/// Writes `scheme,rho,zeta,bias2,variance,mse,mean_n,reps,se_bias2,se_var`.
pub fn write_curves<W: Write>(summary: &McSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVES_HEADER)?;
    for r in &summary.rows {
        w.write_record([
            r.scheme.clone(),
            fmt_f64(r.rho),
            fmt_f64(r.zeta),
            fmt_f64(r.bias2),
            fmt_f64(r.variance),
            fmt_f64(r.mse),
            fmt_f64(r.mean_n),
            r.reps.to_string(),
            fmt_f64(r.se_bias2),
            fmt_f64(r.se_var),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_curves(summary: &McSummary, path: &Path) -> Result<()> {
    write_curves(summary, std::fs::File::create(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: McConfig,
    pub seed: u64,
    pub target_beta: f64,
    pub rows: usize,
    pub failures: usize,
    pub warnings: Vec<String>,
    /// Not serialised: written manifests must be identical across reruns.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Runs the experiment and times it.
pub fn run_with_manifest(config: &McConfig) -> Result<(McSummary, Manifest)> {
    let start = Instant::now();
    let summary = run_experiment(config)?;
    let manifest = Manifest::new(config, &summary, start.elapsed().as_secs_f64());
    Ok((summary, manifest))
}

impl Manifest {
    pub fn new(config: &McConfig, summary: &McSummary, wall_time_secs: f64) -> Self {
        Self {
            config: config.clone(),
            seed: config.seed,
            target_beta: summary.target_beta,
            rows: summary.rows.len(),
            failures: summary.total_failures(),
            warnings: summary.warnings.clone(),
            wall_time_secs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> McConfig {
        McConfig {
            population: [200, 40, 100, 240],
            sample: [14, 8, 30, 6],
            rho_grid: vec![0.0, 0.5],
            zeta_grid: vec![0.0, 0.5, 1.0],
            replications: 12,
            ..McConfig::sim1()
        }
    }

    #[test]
    fn offsets_average_out() {
        assert!((McConfig::sim1().target_beta() - 1.0).abs() < 1e-15);
        assert!((McConfig::sim2().target_beta() - 1.0).abs() < 1e-15);
        let mut c = McConfig::sim1();
        c.slope_offsets = [1.0, 0.0, 0.0, 0.0];
        assert!((c.target_beta() - (1.0 + 2000.0 / 5600.0)).abs() < 1e-15);
    }

    #[test]
    fn within_stratum_standardization() {
        let mut v = vec![1.0, 2.0, 3.0, 10.0, 14.0, 5.0];
        let strata = [1, 1, 1, 2, 2, 3];
        standardize_within(&mut v, &strata, 10.0, 1.0);
        for idx in [&[0usize, 1, 2][..], &[3, 4]] {
            let m = idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
            let var = idx.iter().map(|&i| (v[i] - m).powi(2)).sum::<f64>() / idx.len() as f64;
            assert!((m - 10.0).abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        assert_eq!(v[5], 10.0);
        assert!(v[0] < v[1] && v[1] < v[2]);
    }

    #[test]
    fn setup_is_fixed_by_seed() {
        let a = setup(&small()).unwrap();
        let b = setup(&small()).unwrap();
        assert_eq!(a.sample, b.sample);
        assert_eq!(a.x, b.x);
        assert_eq!(a.design.observed, vec![14, 8, 30, 6]);
        let mut c = small();
        c.seed = 2;
        assert_ne!(setup(&c).unwrap().x, a.x);
    }

    #[test]
    fn summary_identity_and_shape() {
        let s = run_experiment(&small()).unwrap();
        assert_eq!(s.rows.len(), 6);
        for r in &s.rows {
            assert!((r.mse - r.bias2 - r.variance).abs() <= 1e-10);
            assert_eq!(r.reps + r.failures, 12);
        }
        let order: Vec<(f64, f64)> = s.rows.iter().map(|r| (r.rho, r.zeta)).collect();
        assert_eq!(order[0], (0.0, 0.0));
        assert_eq!(order[3], (0.5, 0.0));
        assert_eq!(s.row("threshold", 0.5, 1.0).unwrap().zeta, 1.0);
    }

    #[test]
    fn schedule_independent() {
        let mut a = small();
        a.execution = Execution::Sequential;
        let mut b = small();
        b.execution = Execution::Parallel;
        assert_eq!(run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
    }

    #[test]
    fn row_moments() {
        let r = McRow::from_estimates("t", 0.0, 0.0, &[1.0, 2.0, 3.0, 4.0], 2.0, 4.0, 0);
        assert_eq!(r.bias, 0.5);
        assert_eq!(r.variance, 1.25);
        assert_eq!(r.mse, 1.5);
        // m4 = (2·1.5⁴ + 2·0.5⁴) / 4
        let m4 = (2.0 * 1.5f64.powi(4) + 2.0 * 0.5f64.powi(4)) / 4.0;
        assert!((r.se_var - ((m4 - 1.5625) / 4.0).sqrt()).abs() < 1e-15);
        let empty = McRow::from_estimates("t", 0.0, 0.0, &[], 2.0, 4.0, 3);
        assert!(empty.mse.is_nan());
        assert_eq!(empty.failures, 3);
    }

    #[test]
    fn kv_config() {
        let text = "# comment\nreplications = 7\nrho_grid = 0, 0.3\nschemes = knn:5,idist\nrow_standardize = off\nsample = 1,2,3,4\n";
        let c = McConfig::parse_kv(text, McConfig::sim1()).unwrap();
        assert_eq!(c.replications, 7);
        assert!(McConfig::parse_kv("dgp_weights = none\n", McConfig::sim1())
            .unwrap()
            .dgp_weights
            .is_none());
        assert_eq!(c.rho_grid, vec![0.0, 0.3]);
        assert_eq!(c.sample, [1, 2, 3, 4]);
        assert_eq!(c.schemes.len(), 2);
        assert!(c.schemes.iter().all(|s| !s.row_standardize));
        let err = McConfig::parse_kv("beta = 1\nbogus = 2\n", McConfig::sim1()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(McConfig::parse_kv("sample = 1,2\n", McConfig::sim1()).is_err());
    }

    #[test]
    fn curves_csv() {
        let empty = McSummary {
            rows: vec![],
            target_beta: 1.0,
            warnings: vec![],
        };
        let mut buf = Vec::new();
        write_curves(&empty, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "scheme,rho,zeta,bias2,variance,mse,mean_n,reps,se_bias2,se_var\n"
        );
        let s = run_experiment(&small()).unwrap();
        let mut a = Vec::new();
        write_curves(&s, &mut a).unwrap();
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 7);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.replications = 0;
        assert!(run_experiment(&c).is_err());
        let mut c = small();
        c.zeta_grid = vec![1.5];
        assert!(run_experiment(&c).is_err());
        let mut c = small();
        c.sample = [500, 1, 1, 1];
        assert!(run_experiment(&c).is_err());
    }
}
