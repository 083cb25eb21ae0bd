//! Listing ingestion and polygon strata.
//!
//! Listings arrive as CSV with header `id,lon,lat,price,size[,stratum][,...]`
//! (decimal degrees) or `id,x,y,price,size[,...]` (already planar). Degrees
//! are projected to local metres with an equirectangular projection about
//! the centroid `(lon₀, lat₀)`:
//!
//! ```text
//! x = R · Δlon · cos(lat₀),   y = R · Δlat,   R = 6 371 000 m
//! ```
//!
//! with angles in radians. The original degrees are kept as the `lon` and
//! `lat` attributes so a file can be written back unchanged.
//!
//! Strata are polygons with an auxiliary size each. Membership uses the
//! even-odd ray-casting rule over all rings of a stratum, so holes work.
//! A point on a polygon boundary belongs to that polygon; when several
//! strata claim a point, the lowest stratum id wins.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{fmt_f64, Column, PointSet};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A listing rejected during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line in the input file.
    pub line: usize,
    pub id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Listings {
    /// Projected points carrying `price`, `size`, any extra columns and,
    /// for degree input, `lon` / `lat`.
    pub points: PointSet,
    pub rejected: Vec<Rejection>,
    /// Projection origin in degrees; `None` for planar input.
    pub origin: Option<[f64; 2]>,
    /// Names of the extra columns, in file order.
    pub extra: Vec<String>,
}

/// Equirectangular projection of `[lon, lat]` degrees about `origin`.
pub fn project(lonlat: [f64; 2], origin: [f64; 2]) -> [f64; 2] {
    let [lon0, lat0] = origin;
    [
        EARTH_RADIUS_M * (lonlat[0] - lon0).to_radians() * lat0.to_radians().cos(),
        EARTH_RADIUS_M * (lonlat[1] - lat0).to_radians(),
    ]
}

pub fn ingest_listings<R: Read>(reader: R) -> Result<Listings> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let degrees = match header.get(..5) {
        Some([a, b, c, d, e]) if a == "id" && d == "price" && e == "size" => {
            match (b.as_str(), c.as_str()) {
                ("lon", "lat") => true,
                ("x", "y") => false,
                _ => None.ok_or_else(bad_header)?,
            }
        }
        _ => return Err(bad_header()),
    };
    let has_stratum = header.get(5).is_some_and(|h| h == "stratum");
    let extra_start = if has_stratum { 6 } else { 5 };
    let extra: Vec<String> = header[extra_start..].to_vec();
    for name in &extra {
        if ["lon", "lat", "price", "size", "x", "y", "id", "stratum"].contains(&name.as_str()) {
            return Err(Error::Data(format!("column '{name}' appears twice")));
        }
    }

    let mut ids = Vec::new();
    let mut raw = Vec::new();
    let mut strata = Vec::new();
    let mut price = Vec::new();
    let mut size = Vec::new();
    let mut extra_cols: Vec<Vec<f64>> = vec![Vec::new(); extra.len()];
    let mut rejected = Vec::new();

    for (row, rec) in r.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            let v: f64 = rec[j].parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}: {} = '{}' is not a number",
                    header[j], &rec[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "line {line}: {} is not finite",
                    header[j]
                )));
            }
            Ok(v)
        };
        let id: u64 = rec[0].parse().map_err(|_| {
            Error::Data(format!("line {line}: id = '{}' is not an integer", &rec[0]))
        })?;
        let c = [num(1)?, num(2)?];
        if degrees && (c[0].abs() > 180.0 || c[1].abs() > 90.0) {
            return Err(Error::Data(format!(
                "line {line}: coordinates out of range"
            )));
        }
        let (p, s) = (num(3)?, num(4)?);
        let stratum = if has_stratum {
            Some(rec[5].parse::<u32>().map_err(|_| {
                Error::Data(format!(
                    "line {line}: stratum = '{}' is not an integer",
                    &rec[5]
                ))
            })?)
        } else {
            None
        };
        let extras: Vec<f64> = (extra_start..header.len())
            .map(num)
            .collect::<Result<_>>()?;
        let reason = match (p > 0.0, s > 0.0) {
            (true, true) => None,
            (false, true) => Some(format!("price {p} is not positive")),
            (true, false) => Some(format!("size {s} is not positive")),
            (false, false) => Some(format!("price {p} and size {s} are not positive")),
        };
        if let Some(reason) = reason {
            log::warn!("line {line}: listing {id} rejected: {reason}");
            rejected.push(Rejection { line, id, reason });
            continue;
        }
        ids.push(id);
        raw.push(c);
        strata.extend(stratum);
        price.push(p);
        size.push(s);
        for (col, v) in extra_cols.iter_mut().zip(extras) {
            col.push(v);
        }
    }

    let origin = (degrees && !raw.is_empty()).then(|| {
        let n = raw.len() as f64;
        [
            raw.iter().map(|c| c[0]).sum::<f64>() / n,
            raw.iter().map(|c| c[1]).sum::<f64>() / n,
        ]
    });
    let coords: Vec<[f64; 2]> = match origin {
        Some(o) => raw.iter().map(|&c| project(c, o)).collect(),
        None => raw.clone(),
    };
    let mut attrs = vec![
        Column {
            name: "price".into(),
            values: price,
        },
        Column {
            name: "size".into(),
            values: size,
        },
    ];
    if degrees {
        attrs.push(Column {
            name: "lon".into(),
            values: raw.iter().map(|c| c[0]).collect(),
        });
        attrs.push(Column {
            name: "lat".into(),
            values: raw.iter().map(|c| c[1]).collect(),
        });
    }
    attrs.extend(
        extra
            .iter()
            .cloned()
            .zip(extra_cols)
            .map(|(name, values)| Column { name, values }),
    );
    let points = PointSet::new(ids, coords, has_stratum.then_some(strata), attrs)
        .map_err(|e| Error::Data(e.to_string()))?;
    Ok(Listings {
        points,
        rejected,
        origin,
        extra,
    })
}

fn bad_header() -> Error {
    Error::Data("listing header must start with id,lon,lat,price,size or id,x,y,price,size".into())
}

impl Listings {
    /// Writes the listings back in the input layout.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let p = &self.points;
        let degrees = self.origin.is_some() || p.attr("lon").is_some();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = if degrees {
            vec!["id", "lon", "lat", "price", "size"]
        } else {
            vec!["id", "x", "y", "price", "size"]
        };
        if p.strata().is_some() {
            header.push("stratum");
        }
        header.extend(self.extra.iter().map(String::as_str));
        w.write_record(&header)?;
        let col = |name: &str| p.attr(name).expect("ingested column");
        for i in 0..p.len() {
            let (a, b) = if degrees {
                (col("lon")[i], col("lat")[i])
            } else {
                (p.coords()[i][0], p.coords()[i][1])
            };
            let mut rec = vec![
                p.ids()[i].to_string(),
                fmt_f64(a),
                fmt_f64(b),
                fmt_f64(col("price")[i]),
                fmt_f64(col("size")[i]),
            ];
            if let Some(s) = p.strata() {
                rec.push(s[i].to_string());
            }
            rec.extend(self.extra.iter().map(|e| fmt_f64(col(e)[i])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One stratum: auxiliary size and, optionally, its polygon rings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub id: u32,
    pub aux_size: f64,
    /// Closed rings (first vertex repeated last), in the same coordinates as
    /// the points they are tested against.
    #[serde(default)]
    pub rings: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrataSpec {
    pub strata: Vec<Stratum>,
}

impl StrataSpec {
    pub fn aux_sizes(&self) -> BTreeMap<u32, f64> {
        self.strata.iter().map(|s| (s.id, s.aux_size)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.strata {
            if !seen.insert(s.id) {
                return Err(Error::Data(format!("stratum {} defined twice", s.id)));
            }
            if !(s.aux_size.is_finite() && s.aux_size > 0.0) {
                return Err(Error::Data(format!(
                    "stratum {}: auxiliary size must be positive",
                    s.id
                )));
            }
            for ring in &s.rings {
                validate_ring(s.id, ring)?;
            }
        }
        Ok(())
    }

    /// Reads the auxiliary table `stratum,aux_size`.
    pub fn read_aux_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 || header[0] != "stratum" || header[1] != "aux_size" {
            return Err(Error::Data(
                "auxiliary table header must be stratum,aux_size".into(),
            ));
        }
        let mut strata = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
            let id = rec[0]
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: bad stratum id '{}'", &rec[0])))?;
            let aux_size = rec[1]
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: bad aux_size '{}'", &rec[1])))?;
            strata.push(Stratum {
                id,
                aux_size,
                rings: Vec::new(),
            });
        }
        let spec = Self { strata };
        spec.validate()?;
        Ok(spec)
    }

    /// Attaches rings from a vertex CSV `stratum,ring,lon,lat` (or
    /// `stratum,ring,x,y`) listed in ring order. Every stratum named must
    /// already exist.
    pub fn read_polygon_csv<R: Read>(mut self, reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        if !matches!(
            h[..],
            ["stratum", "ring", "lon", "lat"] | ["stratum", "ring", "x", "y"]
        ) {
            return Err(Error::Data(
                "polygon CSV header must be stratum,ring,lon,lat or stratum,ring,x,y".into(),
            ));
        }
        let mut rings: BTreeMap<(u32, u32), Vec<[f64; 2]>> = BTreeMap::new();
        for (row, rec) in r.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
            let bad = || Error::Data(format!("line {line}: malformed vertex"));
            let s: u32 = rec[0].parse().map_err(|_| bad())?;
            let k: u32 = rec[1].parse().map_err(|_| bad())?;
            let x: f64 = rec[2].parse().map_err(|_| bad())?;
            let y: f64 = rec[3].parse().map_err(|_| bad())?;
            rings.entry((s, k)).or_default().push([x, y]);
        }
        for ((s, _), ring) in rings {
            let stratum = self
                .strata
                .iter_mut()
                .find(|t| t.id == s)
                .ok_or_else(|| Error::Data(format!("polygon for unknown stratum {s}")))?;
            stratum.rings.push(ring);
        }
        self.validate()?;
        Ok(self)
    }

    /// `[{"id": .., "aux_size": .., "rings": [[[x, y], ...]]}, ...]` or
    /// `{"strata": [...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let spec: Self = if v.is_array() {
            Self {
                strata: serde_json::from_value(v)?,
            }
        } else {
            serde_json::from_value(v)?
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Minimal feature-collection reader: `Polygon` and `MultiPolygon`
    /// geometries; the stratum id comes from the `stratum` (or `id`)
    /// property and the size from `aux_size`, falling back to `aux` when
    /// given.
    pub fn from_geojson(text: &str, aux: Option<&BTreeMap<u32, f64>>) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let features = v
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Data("expected a FeatureCollection with features".into()))?;
        let mut strata: Vec<Stratum> = Vec::new();
        for (k, f) in features.iter().enumerate() {
            let props = f.get("properties").unwrap_or(&Value::Null);
            let id = props
                .get("stratum")
                .or_else(|| props.get("id"))
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Data(format!("feature {k}: missing stratum id")))?
                as u32;
            let aux_size = match props.get("aux_size").and_then(Value::as_f64) {
                Some(a) => a,
                None => *aux
                    .and_then(|m| m.get(&id))
                    .ok_or_else(|| Error::Data(format!("stratum {id}: no auxiliary size")))?,
            };
            let geom = f
                .get("geometry")
                .ok_or_else(|| Error::Data(format!("stratum {id}: missing geometry")))?;
            let coords = geom.get("coordinates").unwrap_or(&Value::Null);
            let polys: Vec<&Value> = match geom.get("type").and_then(Value::as_str) {
                Some("Polygon") => vec![coords],
                Some("MultiPolygon") => coords
                    .as_array()
                    .map(|a| a.iter().collect())
                    .unwrap_or_default(),
                other => {
                    return Err(Error::Data(format!(
                        "stratum {id}: unsupported geometry {other:?}"
                    )))
                }
            };
            let mut rings = Vec::new();
            for poly in polys {
                let parsed: Vec<Vec<[f64; 2]>> = serde_json::from_value(poly.clone())
                    .map_err(|e| Error::Data(format!("stratum {id}: bad coordinates: {e}")))?;
                rings.extend(parsed);
            }
            match strata.iter_mut().find(|s| s.id == id) {
                Some(s) => s.rings.extend(rings),
                None => strata.push(Stratum {
                    id,
                    aux_size,
                    rings,
                }),
            }
        }
        let spec = Self { strata };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .strata
            .iter()
            .map(|s| {
                serde_json::json!({
                    "type": "Feature",
                    "properties": {"stratum": s.id, "aux_size": s.aux_size},
                    "geometry": {"type": "MultiPolygon", "coordinates": s.rings.iter().map(|r| vec![r]).collect::<Vec<_>>()},
                })
            })
            .collect();
        serde_json::json!({"type": "FeatureCollection", "features": features})
    }
}

fn validate_ring(id: u32, ring: &[[f64; 2]]) -> Result<()> {
    let bad = |m: &str| Err(Error::Data(format!("stratum {id}: {m}")));
    if ring.len() < 4 {
        return bad("ring needs at least three distinct vertices and closure");
    }
    if ring.iter().flatten().any(|v| !v.is_finite()) {
        return bad("non-finite vertex");
    }
    if ring.first() != ring.last() {
        return bad("ring is not closed (first vertex must equal last)");
    }
    if signed_area(ring).abs() <= f64::EPSILON * bbox_scale(ring).powi(2) {
        return bad("degenerate ring with zero area");
    }
    let m = ring.len() - 1;
    for a in 0..m {
        for b in a + 1..m {
            if b == a + 1 || (a == 0 && b == m - 1) {
                continue;
            }
            if segments_intersect(ring[a], ring[a + 1], ring[b], ring[b + 1]) {
                return bad("ring intersects itself");
            }
        }
    }
    Ok(())
}

fn bbox_scale(ring: &[[f64; 2]]) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in ring {
        for k in 0..2 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (hi[0] - lo[0]).max(hi[1] - lo[1])
}

pub fn signed_area(ring: &[[f64; 2]]) -> f64 {
    ring.windows(2)
        .map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1])
        .sum::<f64>()
        / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    cross(a, b, p).abs() <= 1e-12 * scale * scale
        && p[0] >= a[0].min(b[0]) - 1e-12 * scale
        && p[0] <= a[0].max(b[0]) + 1e-12 * scale
        && p[1] >= a[1].min(b[1]) - 1e-12 * scale
        && p[1] <= a[1].max(b[1]) + 1e-12 * scale
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(p1, q1, q2)
        || on_segment(p2, q1, q2)
        || on_segment(q1, p1, p2)
        || on_segment(q2, p1, p2)
}

/// Where a point lies relative to a set of rings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Inside,
    Boundary,
    Outside,
}

/// Even-odd ray casting over all `rings`, with boundary detection.
pub fn locate(p: [f64; 2], rings: &[Vec<[f64; 2]>]) -> Location {
    let mut inside = false;
    for ring in rings {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if on_segment(p, a, b) {
                return Location::Boundary;
            }
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
    }
    if inside {
        Location::Inside
    } else {
        Location::Outside
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Labelled points; unassigned points are dropped.
    pub points: PointSet,
    /// Ids of points outside every polygon.
    pub unassigned: Vec<u64>,
    /// Ids of points on the boundary of more than one stratum.
    pub ties: Vec<u64>,
}

/// Labels each point with the stratum whose polygon contains it. Polygons
/// are tested against the `lon` / `lat` attributes when present, otherwise
/// against the planar coordinates.
pub fn assign_strata(points: &PointSet, spec: &StrataSpec) -> Result<Assignment> {
    spec.validate()?;
    if let Some(s) = spec.strata.iter().find(|s| s.rings.is_empty()) {
        return Err(Error::Data(format!("stratum {} has no polygon", s.id)));
    }
    let mut order: Vec<&Stratum> = spec.strata.iter().collect();
    order.sort_by_key(|s| s.id);
    let coord = |i: usize| -> [f64; 2] {
        match (points.attr("lon"), points.attr("lat")) {
            (Some(lon), Some(lat)) => [lon[i], lat[i]],
            _ => points.coords()[i],
        }
    };
    let mut keep = Vec::new();
    let mut labels = Vec::new();
    let mut unassigned = Vec::new();
    let mut ties = Vec::new();
    for i in 0..points.len() {
        let p = coord(i);
        let mut found: Option<u32> = None;
        let mut boundary_hits = 0;
        for s in &order {
            match locate(p, &s.rings) {
                Location::Outside => {}
                loc => {
                    if loc == Location::Boundary {
                        boundary_hits += 1;
                    }
                    if found.is_none() {
                        found = Some(s.id);
                    }
                    if loc == Location::Inside {
                        break;
                    }
                }
            }
        }
        match found {
            Some(id) => {
                if boundary_hits > 1 {
                    ties.push(points.ids()[i]);
                }
                keep.push(i);
                labels.push(id);
            }
            None => unassigned.push(points.ids()[i]),
        }
    }
    if !unassigned.is_empty() {
        log::warn!(
            "{} point(s) outside every stratum polygon were excluded",
            unassigned.len()
        );
    }
    let points = points.select(&keep).with_strata(labels)?;
    Ok(Assignment {
        points,
        unassigned,
        ties,
    })
}
