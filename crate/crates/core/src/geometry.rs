//! Point sets on the plane, synthetic quadrant populations and convenience
//! samples drawn from them.
//!
//! Quadrants of the unit square are numbered in reading order:
//!
//! ```text
//!   y
//!   1 +-------+-------+
//!     |  Q1   |  Q2   |
//! 0.5 +-------+-------+
//!     |  Q3   |  Q4   |
//!   0 +-------+-------+ x
//!     0      0.5      1
//! ```
//!
//! A point on the line x = 0.5 or y = 0.5 goes to the higher-numbered
//! quadrant, so the centre (0.5, 0.5) is in Q4. Concretely
//! Q1 = [0, 0.5) × (0.5, 1], Q2 = [0.5, 1] × (0.5, 1],
//! Q3 = [0, 0.5) × [0, 0.5], Q4 = [0.5, 1] × [0, 0.5].

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// A named numeric column attached to a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Geo-coded observations. Immutable once built; every column has one entry
/// per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    ids: Vec<u64>,
    coords: Vec<[f64; 2]>,
    strata: Option<Vec<u32>>,
    attrs: Vec<Column>,
}

impl PointSet {
    pub fn new(
        ids: Vec<u64>,
        coords: Vec<[f64; 2]>,
        strata: Option<Vec<u32>>,
        attrs: Vec<Column>,
    ) -> Result<Self> {
        let n = ids.len();
        if coords.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} ids but {} coordinate pairs",
                n,
                coords.len()
            )));
        }
        if let Some(s) = &strata {
            if s.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{} points but {} stratum labels",
                    n,
                    s.len()
                )));
            }
        }
        for c in &attrs {
            if c.values.len() != n {
                return Err(Error::InvalidInput(format!(
                    "attribute '{}' has {} rows, expected {}",
                    c.name,
                    c.values.len(),
                    n
                )));
            }
        }
        if let Some((i, _)) = coords
            .iter()
            .enumerate()
            .find(|(_, c)| !c[0].is_finite() || !c[1].is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinates for point {}",
                ids[i]
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::InvalidInput(format!("duplicate point id {id}")));
            }
        }
        Ok(Self {
            ids,
            coords,
            strata,
            attrs,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn strata(&self) -> Option<&[u32]> {
        self.strata.as_deref()
    }

    pub fn attrs(&self) -> &[Column] {
        &self.attrs
    }

    pub fn attr(&self, name: &str) -> Option<&[f64]> {
        self.attrs
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    /// Returns a copy with a new (or replaced) attribute column.
    pub fn with_attr(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        let mut attrs: Vec<Column> = self
            .attrs
            .iter()
            .filter(|c| c.name != name)
            .cloned()
            .collect();
        attrs.push(Column {
            name: name.to_string(),
            values,
        });
        Self::new(
            self.ids.clone(),
            self.coords.clone(),
            self.strata.clone(),
            attrs,
        )
    }

    pub fn with_strata(&self, strata: Vec<u32>) -> Result<Self> {
        Self::new(
            self.ids.clone(),
            self.coords.clone(),
            Some(strata),
            self.attrs.clone(),
        )
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            strata: self
                .strata
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            attrs: self
                .attrs
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: indices.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
        }
    }

    /// Number of points per stratum label, in label order.
    pub fn stratum_counts(&self) -> Result<BTreeMap<u32, usize>> {
        let strata = self.require_strata()?;
        let mut counts = BTreeMap::new();
        for &s in strata {
            *counts.entry(s).or_insert(0) += 1;
        }
        Ok(counts)
    }

    /// Row indices grouped by stratum, in label order; each group keeps the
    /// point-set order.
    pub fn stratum_members(&self) -> Result<BTreeMap<u32, Vec<usize>>> {
        let strata = self.require_strata()?;
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &s) in strata.iter().enumerate() {
            groups.entry(s).or_default().push(i);
        }
        Ok(groups)
    }

    fn require_strata(&self) -> Result<&[u32]> {
        self.strata
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("point set carries no stratum labels".into()))
    }

    /// Writes `id,x,y[,stratum][,attr...]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        let mut header = vec!["id".to_string(), "x".to_string(), "y".to_string()];
        if self.strata.is_some() {
            header.push("stratum".into());
        }
        header.extend(self.attrs.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.ids[i].to_string(),
                fmt_f64(self.coords[i][0]),
                fmt_f64(self.coords[i][1]),
            ];
            if let Some(s) = &self.strata {
                rec.push(s[i].to_string());
            }
            rec.extend(self.attrs.iter().map(|c| fmt_f64(c.values[i])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`PointSet::write_csv`]. The `stratum`
    /// column is optional; any further columns become attributes.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[0] != "id" || header[1] != "x" || header[2] != "y" {
            return Err(Error::Data(
                "point CSV header must start with id,x,y".into(),
            ));
        }
        let has_stratum = header.get(3).map(|h| h == "stratum").unwrap_or(false);
        let attr_start = if has_stratum { 4 } else { 3 };
        let names: Vec<String> = header[attr_start..].to_vec();

        let mut ids = Vec::new();
        let mut coords = Vec::new();
        let mut strata = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            let field = |j: usize| -> Result<&str> {
                rec.get(j)
                    .ok_or_else(|| Error::Data(format!("line {line}: missing column {j}")))
            };
            let num = |j: usize| -> Result<f64> {
                field(j)?
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("line {line}: column '{}': {e}", header[j])))
            };
            ids.push(
                field(0)?
                    .parse::<u64>()
                    .map_err(|e| Error::Data(format!("line {line}: id: {e}")))?,
            );
            coords.push([num(1)?, num(2)?]);
            if has_stratum {
                strata.push(
                    field(3)?
                        .parse::<u32>()
                        .map_err(|e| Error::Data(format!("line {line}: stratum: {e}")))?,
                );
            }
            for (k, col) in cols.iter_mut().enumerate() {
                col.push(num(attr_start + k)?);
            }
        }
        let attrs = names
            .into_iter()
            .zip(cols)
            .map(|(name, values)| Column { name, values })
            .collect();
        Self::new(ids, coords, has_stratum.then_some(strata), attrs)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Quadrant (1..=4) of a point in the unit square; see the module docs for
/// the numbering and boundary rule.
pub fn assign_quadrant(point: [f64; 2]) -> Result<u32> {
    let [x, y] = point;
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidInput(format!(
            "point ({x}, {y}) lies outside the unit square"
        )));
    }
    let right = x >= 0.5;
    let bottom = y <= 0.5;
    Ok(1 + right as u32 + 2 * bottom as u32)
}

/// Maps a draw `u ∈ [0, 1)` pair into quadrant `q`, respecting the
/// boundary rule so that `assign_quadrant` agrees.
fn place_in_quadrant(q: u32, u: f64, v: f64) -> [f64; 2] {
    let x = match q {
        1 | 3 => 0.5 * u,
        _ => 0.5 + 0.5 * u,
    };
    let y = match q {
        1 | 2 => 1.0 - 0.5 * v,
        _ => 0.5 * v,
    };
    [x, y]
}

/// Uniform points inside each quadrant of the unit square, `counts[q]`
/// points in quadrant `q + 1`. Ids run from 0 in quadrant order; the stratum
/// label is the quadrant number.
pub fn generate_quadrant_population(counts: [usize; 4], seed: u64) -> PointSet {
    let total: usize = counts.iter().sum();
    let mut ids = Vec::with_capacity(total);
    let mut coords = Vec::with_capacity(total);
    let mut strata = Vec::with_capacity(total);
    for (qi, &count) in counts.iter().enumerate() {
        let q = qi as u32 + 1;
        let mut rng = rng::stream(seed, &[tag::POPULATION, q as u64]);
        for _ in 0..count {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            ids.push(ids.len() as u64);
            coords.push(place_in_quadrant(q, u, v));
            strata.push(q);
        }
    }
    PointSet {
        ids,
        coords,
        strata: Some(strata),
        attrs: Vec::new(),
    }
}

/// Uniform sampling without replacement inside each stratum. `counts` maps
/// stratum label to the number of points to keep; strata not mentioned keep
/// nothing. Selected rows keep their original relative order.
pub fn convenience_sample(
    population: &PointSet,
    counts: &BTreeMap<u32, usize>,
    seed: u64,
) -> Result<PointSet> {
    stratified_subsample(population, counts, seed, tag::CONVENIENCE)
}

/// Shared by convenience sampling and post-sampling deletion; `purpose`
/// separates their random streams.
pub(crate) fn stratified_subsample(
    points: &PointSet,
    counts: &BTreeMap<u32, usize>,
    seed: u64,
    purpose: u64,
) -> Result<PointSet> {
    let keep = stratified_subsample_indices(points, counts, seed, purpose)?;
    Ok(points.select(&keep))
}

/// Row indices (ascending) kept by [`stratified_subsample`].
pub(crate) fn stratified_subsample_indices(
    points: &PointSet,
    counts: &BTreeMap<u32, usize>,
    seed: u64,
    purpose: u64,
) -> Result<Vec<usize>> {
    let members = points.stratum_members()?;
    for (&s, &want) in counts {
        let have = members.get(&s).map_or(0, Vec::len);
        if want > have {
            return Err(Error::StratumTooSmall {
                stratum: s,
                requested: want,
                available: have,
            });
        }
    }
    let mut keep = Vec::new();
    for (&s, &want) in counts {
        let group = match members.get(&s) {
            Some(g) => g,
            None => continue,
        };
        if want == group.len() {
            keep.extend_from_slice(group);
            continue;
        }
        let mut rng = rng::stream(seed, &[purpose, s as u64]);
        keep.extend(
            index::sample(&mut rng, group.len(), want)
                .into_iter()
                .map(|j| group[j]),
        );
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Per-stratum sample counts as a map keyed by quadrant number.
pub fn quadrant_counts(counts: [usize; 4]) -> BTreeMap<u32, usize> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as u32 + 1, c))
        .collect()
}
