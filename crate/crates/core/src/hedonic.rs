//! Hedonic price pipeline: listings, strata, ζ sweep, summary table.
//!
//! Also hosts a synthetic city generator standing in for scraped listings.
//! It places 1000 listings on an 11 × 8 grid of rectangular neighbourhoods,
//! oversamples the centre, and draws prices from a spatial lag model whose
//! price per square metre falls from the centre to the periphery.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fmt_f64, PointSet};
use crate::listings::{assign_strata, ingest_listings, Listings, StrataSpec, Stratum};
use crate::postsample::{
    largest_remainder, zeta_sweep, StratifiedDesign, SweepConfig, ZetaSweepResult,
};
use crate::rng::{self, tag};
use crate::slm::{column, FitOptions, SpatialFilter};
use crate::weights::WeightSpec;

/// Defaults: min-connecting threshold W, ζ grid 0, 0.2, ..., 1, one deletion
/// per ζ, and an intercept alongside size.
#[derive(Debug, Clone)]
pub struct HedonicOptions {
    pub sweep: SweepConfig,
    pub price: String,
    pub size: String,
}

impl Default for HedonicOptions {
    fn default() -> Self {
        Self {
            sweep: SweepConfig {
                fit: FitOptions {
                    intercept: true,
                    ..FitOptions::default()
                },
                ..SweepConfig::default()
            },
            price: "price".into(),
            size: "size".into(),
        }
    }
}

/// One line of the summary table. `relative_bias` is a fraction of `|β̂₁|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub zeta: f64,
    pub sample_size: usize,
    pub rho_hat: f64,
    pub beta_hat: f64,
    pub relative_bias: f64,
    pub mse: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedonicReport {
    pub rows: Vec<TableRow>,
    pub sweep: ZetaSweepResult,
    pub listings: usize,
    /// Strata with an auxiliary size but no listings.
    pub excluded_strata: Vec<u32>,
    /// Listings outside every polygon.
    pub unassigned: Vec<u64>,
    pub warnings: Vec<String>,
}

impl HedonicReport {
    pub fn selected(&self) -> &TableRow {
        &self.rows[self.sweep.selected]
    }

    /// `zeta,sample_size,rho_hat,beta_hat,relative_bias,mse,selected`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "zeta",
            "sample_size",
            "rho_hat",
            "beta_hat",
            "relative_bias",
            "mse",
            "selected",
        ])?;
        for r in &self.rows {
            w.write_record([
                fmt_f64(r.zeta),
                r.sample_size.to_string(),
                fmt_f64(r.rho_hat),
                fmt_f64(r.beta_hat),
                fmt_f64(r.relative_bias),
                fmt_f64(r.mse),
                u8::from(r.selected).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Regresses price on size under the SLM across the ζ grid. Points that
/// already carry stratum labels use them; otherwise they are assigned by
/// the polygons in `strata`.
pub fn hedonic_pipeline(
    points: &PointSet,
    strata: &StrataSpec,
    options: &HedonicOptions,
) -> Result<HedonicReport> {
    strata.validate()?;
    let mut warnings = Vec::new();
    let (points, unassigned) = match points.strata() {
        Some(_) => (points.clone(), Vec::new()),
        None => {
            let a = assign_strata(points, strata)?;
            if !a.unassigned.is_empty() {
                warnings.push(format!(
                    "{} listing(s) outside every stratum were excluded",
                    a.unassigned.len()
                ));
            }
            (a.points, a.unassigned)
        }
    };
    let counts = points.stratum_counts()?;
    let mut aux = BTreeMap::new();
    let mut excluded = Vec::new();
    for (id, size) in strata.aux_sizes() {
        if counts.contains_key(&id) {
            aux.insert(id, size);
        } else {
            excluded.push(id);
        }
    }
    if !excluded.is_empty() {
        let msg = format!("strata without listings excluded from the design: {excluded:?}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let design = StratifiedDesign::from_points(&points, &aux)?;
    let col = |name: &str| {
        points
            .attr(name)
            .ok_or_else(|| Error::Data(format!("listings have no '{name}' column")))
    };
    let y = DVector::from_column_slice(col(&options.price)?);
    let x = column(col(&options.size)?);
    let sweep = zeta_sweep(&y, &x, &points, &design, &options.sweep)?;
    warnings.extend(sweep.warnings.iter().cloned());
    let rows = sweep
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| TableRow {
            zeta: p.zeta,
            sample_size: p.n,
            rho_hat: p.rho_hat,
            beta_hat: p.beta_hat,
            relative_bias: p.relative_bias(sweep.reference_beta),
            mse: p.mse,
            selected: i == sweep.selected,
        })
        .collect();
    Ok(HedonicReport {
        rows,
        listings: points.len(),
        excluded_strata: excluded,
        unassigned,
        warnings,
        sweep,
    })
}

/// Parameters of the synthetic city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityParams {
    pub listings: usize,
    pub cols: usize,
    pub rows: usize,
    /// `[west, south, east, north]` in degrees.
    pub bbox: [f64; 4],
    /// Price per m² at the centre and at the farthest corner.
    pub slope_centre: f64,
    pub slope_edge: f64,
    /// Location premium added to every listing at the centre, falling
    /// linearly to zero at the farthest corner.
    pub premium_centre: f64,
    /// Slopes act on size minus this reference; the level at the reference
    /// size is the midpoint slope times the reference plus the premium.
    pub size_ref: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Decay of listing intensity with normalised distance from the centre.
    pub centre_pull: f64,
    /// Families per stratum at the centre and at the farthest corner.
    pub families_centre: f64,
    pub families_edge: f64,
    /// Listings guaranteed per stratum.
    pub min_per_stratum: usize,
    /// Neighbour radius in metres for the generating weights; `None` uses
    /// the smallest radius that leaves no listing isolated.
    pub threshold_m: Option<f64>,
}

impl Default for CityParams {
    fn default() -> Self {
        Self {
            listings: 1000,
            cols: 11,
            rows: 8,
            bbox: [9.08, 45.40, 9.28, 45.54],
            slope_centre: 6000.0,
            slope_edge: 3000.0,
            premium_centre: 60000.0,
            size_ref: 75.0,
            rho: 0.4,
            sigma: 30000.0,
            centre_pull: 3.0,
            families_centre: 800.0,
            families_edge: 4800.0,
            min_per_stratum: 2,
            threshold_m: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub listings: Listings,
    /// Rectangular cells in lon/lat with family counts as auxiliary sizes.
    pub strata: StrataSpec,
    pub params: CityParams,
    /// True price per m² by stratum.
    pub slopes: BTreeMap<u32, f64>,
    /// Family-weighted mean slope: the population value the sweep targets.
    pub target_beta: f64,
}

impl CityParams {
    fn cell(&self, id: u32) -> (usize, usize) {
        let k = id as usize - 1;
        (k / self.cols, k % self.cols)
    }

    /// Normalised distance of a cell centre from the grid centre, in [0, 1].
    fn centrality(&self, id: u32) -> f64 {
        let (r, c) = self.cell(id);
        let dx = (c as f64 + 0.5) / self.cols as f64 - 0.5;
        let dy = (r as f64 + 0.5) / self.rows as f64 - 0.5;
        (dx * dx + dy * dy).sqrt() / 0.5f64.sqrt()
    }

    fn cell_bounds(&self, id: u32) -> [f64; 4] {
        let (r, c) = self.cell(id);
        let [w, s, e, n] = self.bbox;
        let dx = (e - w) / self.cols as f64;
        let dy = (n - s) / self.rows as f64;
        [
            w + c as f64 * dx,
            s + r as f64 * dy,
            w + (c + 1) as f64 * dx,
            s + (r + 1) as f64 * dy,
        ]
    }
}

/// Builds the synthetic city for `seed` with default parameters.
pub fn synthetic_city(seed: u64) -> Result<SyntheticCity> {
    synthetic_city_with(&CityParams::default(), seed)
}

pub fn synthetic_city_with(params: &CityParams, seed: u64) -> Result<SyntheticCity> {
    let m = params.cols * params.rows;
    if m == 0 || params.listings < m * params.min_per_stratum {
        return Err(Error::InvalidInput("too few listings for the grid".into()));
    }
    let ids: Vec<u32> = (1..=m as u32).collect();
    let mut rng = rng::stream(seed, &[tag::SYNTHETIC, 0]);

    let mut strata = Vec::with_capacity(m);
    let mut slopes = BTreeMap::new();
    let mut weight = Vec::with_capacity(m);
    for &id in &ids {
        let d = params.centrality(id);
        let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * 0.2;
        let families = ((params.families_centre
            + (params.families_edge - params.families_centre) * d.powf(1.5))
            * jitter.exp())
        .round();
        let [w, s, e, n] = params.cell_bounds(id);
        strata.push(Stratum {
            id,
            aux_size: families,
            rings: vec![vec![[w, s], [e, s], [e, n], [w, n], [w, s]]],
        });
        slopes.insert(
            id,
            params.slope_centre + (params.slope_edge - params.slope_centre) * d,
        );
        weight.push((-params.centre_pull * d).exp());
    }
    let total_w: f64 = weight.iter().sum();
    let spare = params.listings - m * params.min_per_stratum;
    let extra = largest_remainder(
        &weight
            .iter()
            .map(|w| spare as f64 * w / total_w)
            .collect::<Vec<_>>(),
        spare,
    );

    let mut rows = Vec::with_capacity(params.listings);
    for (k, &id) in ids.iter().enumerate() {
        let [w, s, e, n] = params.cell_bounds(id);
        for _ in 0..params.min_per_stratum + extra[k] {
            let lon = w + (e - w) * rng.random::<f64>();
            let lat = s + (n - s) * rng.random::<f64>();
            let z: f64 = rng.sample(StandardNormal);
            let size = (75f64.ln() + 0.35 * z).exp().round().max(15.0);
            rows.push((id, lon, lat, size));
        }
    }

    // Prices need the neighbourhood structure, so project first.
    let n = rows.len();
    let origin = [
        rows.iter().map(|r| r.1).sum::<f64>() / n as f64,
        rows.iter().map(|r| r.2).sum::<f64>() / n as f64,
    ];
    let coords: Vec<[f64; 2]> = rows
        .iter()
        .map(|r| crate::listings::project([r.1, r.2], origin))
        .collect();
    let planar = PointSet::new((1..=n as u64).collect(), coords, None, vec![])?;
    let spec = match params.threshold_m {
        Some(d) => WeightSpec::parse(&format!("threshold:{d}"))?,
        None => WeightSpec::threshold(),
    };
    let w = spec.build(&planar)?;
    if !w.isolated_points().is_empty() {
        return Err(Error::Numerical(
            "generating threshold leaves isolated listings".into(),
        ));
    }
    let filter = SpatialFilter::new(&w, params.rho)?;
    let mut noise = rng::stream(seed, &[tag::SYNTHETIC, 1]);
    let rhs: Vec<f64> = rows
        .iter()
        .map(|&(id, _, _, size)| {
            let d = params.centrality(id);
            let mid = 0.5 * (params.slope_centre + params.slope_edge);
            params.premium_centre * (1.0 - d)
                + mid * params.size_ref
                + slopes[&id] * (size - params.size_ref)
                + params.sigma * noise.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let price = filter.apply(&rhs);

    let mut buf = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut buf);
        wtr.write_record(["id", "lon", "lat", "price", "size"])?;
        for (i, &(_, lon, lat, size)) in rows.iter().enumerate() {
            // Whole currency units, as in advertisements; kept positive.
            let p = price[i].round().max(1000.0);
            wtr.write_record([
                (i + 1).to_string(),
                fmt_f64(lon),
                fmt_f64(lat),
                fmt_f64(p),
                fmt_f64(size),
            ])?;
        }
        wtr.flush()?;
    }
    let listings = ingest_listings(buf.as_slice())?;
    let strata = StrataSpec { strata };
    let fam = strata.aux_sizes();
    let total: f64 = fam.values().sum();
    let target_beta = fam.iter().map(|(id, f)| f * slopes[id]).sum::<f64>() / total;
    Ok(SyntheticCity {
        listings,
        strata,
        params: params.clone(),
        slopes,
        target_beta,
    })
}

impl SyntheticCity {
    /// Writes `listings.csv`, `strata.csv` (auxiliary table),
    /// `polygons.csv` and `strata.geojson` into `dir`.
    pub fn write_dir(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.listings
            .write_csv(std::fs::File::create(dir.join("listings.csv"))?)?;
        let mut aux = csv::Writer::from_path(dir.join("strata.csv"))?;
        aux.write_record(["stratum", "aux_size"])?;
        let mut poly = csv::Writer::from_path(dir.join("polygons.csv"))?;
        poly.write_record(["stratum", "ring", "lon", "lat"])?;
        for s in &self.strata.strata {
            aux.write_record([s.id.to_string(), fmt_f64(s.aux_size)])?;
            for (k, ring) in s.rings.iter().enumerate() {
                for v in ring {
                    poly.write_record([
                        s.id.to_string(),
                        k.to_string(),
                        fmt_f64(v[0]),
                        fmt_f64(v[1]),
                    ])?;
                }
            }
        }
        aux.flush()?;
        poly.flush()?;
        let gj = serde_json::to_string_pretty(&self.strata.to_geojson())?;
        std::fs::write(dir.join("strata.geojson"), gj + "\n")?;
        Ok(())
    }
}
