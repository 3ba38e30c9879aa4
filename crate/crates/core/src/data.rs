//! Observed detection/nondetection data, covariates and the long-CSV format.
//!
//! The on-disk format is a single "tidy" CSV with one row per
//! (site, season, replicate) survey. Rows that are absent from the file are
//! treated as missing surveys; a row with an empty `y` cell is also missing
//! but may still carry covariate values (useful for seasons that are only
//! predicted).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Site identifiers and planar coordinates, in canonical (identifier) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialCoordinates {
    site_ids: Vec<String>,
    coords: Vec<[f64; 2]>,
}

impl SpatialCoordinates {
    pub fn new(site_ids: Vec<String>, coords: Vec<[f64; 2]>) -> Result<Self> {
        if site_ids.len() != coords.len() {
            return Err(Error::Dataset(format!(
                "{} site identifiers but {} coordinate pairs",
                site_ids.len(),
                coords.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for id in &site_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Dataset(format!("duplicate site identifier '{id}'")));
            }
        }
        let mut by_location: HashMap<(u64, u64), usize> = HashMap::new();
        for (i, c) in coords.iter().enumerate() {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(Error::Dataset(format!(
                    "site '{}' has non-finite coordinates",
                    site_ids[i]
                )));
            }
            // +0.0 and -0.0 are the same location.
            let key = ((c[0] + 0.0).to_bits(), (c[1] + 0.0).to_bits());
            if let Some(&other) = by_location.get(&key) {
                return Err(Error::Dataset(format!(
                    "sites '{}' and '{}' share coordinates ({}, {})",
                    site_ids[other], site_ids[i], c[0], c[1]
                )));
            }
            by_location.insert(key, i);
        }
        Ok(Self { site_ids, coords })
    }

    /// Unnamed sites `s0001, s0002, ...` in the given order.
    pub fn from_points(coords: Vec<[f64; 2]>) -> Result<Self> {
        let width = coords.len().to_string().len().max(4);
        let ids = (0..coords.len())
            .map(|i| format!("s{:0width$}", i + 1, width = width))
            .collect();
        Self::new(ids, coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn point(&self, j: usize) -> [f64; 2] {
        self.coords[j]
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        euclidean(self.coords[a], self.coords[b])
    }

    /// Smallest and largest inter-site distance, `None` with fewer than two sites.
    pub fn distance_range(&self) -> Option<(f64, f64)> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                let d = self.distance(a, b);
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        Some((lo, hi))
    }
}

pub fn euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Detection/nondetection records `y[j][t][k]` with explicit missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionData {
    coordinates: SpatialCoordinates,
    seasons: Vec<i64>,
    n_replicates: usize,
    y: Vec<Option<u8>>,
}

impl DetectionData {
    /// `y` is laid out site-major, then season, then replicate.
    pub fn new(
        coordinates: SpatialCoordinates,
        seasons: Vec<i64>,
        n_replicates: usize,
        y: Vec<Option<u8>>,
    ) -> Result<Self> {
        let n_sites = coordinates.len();
        if n_sites == 0 {
            return Err(Error::Dataset("no sites".into()));
        }
        if seasons.is_empty() {
            return Err(Error::Dataset("no seasons".into()));
        }
        if seasons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Dataset("season labels must be strictly ascending".into()));
        }
        if n_replicates == 0 {
            return Err(Error::Dataset("no replicates".into()));
        }
        if y.len() != n_sites * seasons.len() * n_replicates {
            return Err(Error::Dataset(format!(
                "observation array has {} entries, expected {}",
                y.len(),
                n_sites * seasons.len() * n_replicates
            )));
        }
        if let Some(v) = y.iter().flatten().find(|&&v| v > 1) {
            return Err(Error::Dataset(format!("observation value {v} is not 0 or 1")));
        }
        let data = Self {
            coordinates,
            seasons,
            n_replicates,
            y,
        };
        for j in 0..n_sites {
            if data.seasons_sampled(j).is_empty() {
                return Err(Error::Dataset(format!(
                    "site '{}' has no non-missing observations",
                    data.coordinates.site_ids[j]
                )));
            }
        }
        Ok(data)
    }

    pub fn coordinates(&self) -> &SpatialCoordinates {
        &self.coordinates
    }

    pub fn n_sites(&self) -> usize {
        self.coordinates.len()
    }

    pub fn n_seasons(&self) -> usize {
        self.seasons.len()
    }

    pub fn n_replicates(&self) -> usize {
        self.n_replicates
    }

    pub fn seasons(&self) -> &[i64] {
        &self.seasons
    }

    pub fn season_index(&self, label: i64) -> Option<usize> {
        self.seasons.binary_search(&label).ok()
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.coordinates
            .site_ids
            .binary_search_by(|s| s.as_str().cmp(id))
            .ok()
    }

    fn offset(&self, j: usize, t: usize) -> usize {
        (j * self.seasons.len() + t) * self.n_replicates
    }

    pub fn get(&self, j: usize, t: usize, k: usize) -> Option<u8> {
        self.y[self.offset(j, t) + k]
    }

    pub fn raw(&self) -> &[Option<u8>] {
        &self.y
    }

    /// Non-missing `(replicate, y)` pairs of one site-season.
    pub fn observations(&self, j: usize, t: usize) -> impl Iterator<Item = (usize, u8)> + '_ {
        let start = self.offset(j, t);
        self.y[start..start + self.n_replicates]
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
    }

    pub fn is_sampled(&self, j: usize, t: usize) -> bool {
        self.observations(j, t).next().is_some()
    }

    pub fn seasons_sampled(&self, j: usize) -> Vec<usize> {
        (0..self.n_seasons()).filter(|&t| self.is_sampled(j, t)).collect()
    }

    /// Sampled site-seasons in site-major order.
    pub fn sampled_units(&self) -> Vec<(usize, usize)> {
        let mut units = Vec::new();
        for j in 0..self.n_sites() {
            for t in 0..self.n_seasons() {
                if self.is_sampled(j, t) {
                    units.push((j, t));
                }
            }
        }
        units
    }
}

/// Affine transform applied to a covariate: `standardized = (raw - mean) / sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }

    pub fn invert(&self, standardized: f64) -> f64 {
        standardized * self.sd + self.mean
    }
}

/// Occurrence (site-season), detection (site-season-replicate) covariates and
/// per-site stratum labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSet {
    n_sites: usize,
    n_seasons: usize,
    n_replicates: usize,
    occurrence: BTreeMap<String, Vec<Option<f64>>>,
    detection: BTreeMap<String, Vec<Option<f64>>>,
    strata: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    transforms: BTreeMap<String, Standardization>,
}

impl CovariateSet {
    pub fn new(n_sites: usize, n_seasons: usize, n_replicates: usize) -> Self {
        Self {
            n_sites,
            n_seasons,
            n_replicates,
            occurrence: BTreeMap::new(),
            detection: BTreeMap::new(),
            strata: BTreeMap::new(),
            transforms: BTreeMap::new(),
        }
    }

    pub fn for_data(data: &DetectionData) -> Self {
        Self::new(data.n_sites(), data.n_seasons(), data.n_replicates())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_sites, self.n_seasons, self.n_replicates)
    }

    /// Values laid out site-major then season.
    pub fn insert_occurrence(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.n_sites * self.n_seasons {
            return Err(Error::Dataset(format!(
                "occurrence covariate '{name}' has {} values, expected {}",
                values.len(),
                self.n_sites * self.n_seasons
            )));
        }
        check_finite(name, &values)?;
        self.occurrence.insert(name.to_string(), values);
        Ok(())
    }

    /// Convenience for complete site-season covariates.
    pub fn insert_occurrence_dense(&mut self, name: &str, values: &[f64]) -> Result<()> {
        self.insert_occurrence(name, values.iter().map(|&v| Some(v)).collect())
    }

    /// Values laid out site-major, then season, then replicate.
    pub fn insert_detection(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.n_sites * self.n_seasons * self.n_replicates {
            return Err(Error::Dataset(format!(
                "detection covariate '{name}' has {} values, expected {}",
                values.len(),
                self.n_sites * self.n_seasons * self.n_replicates
            )));
        }
        check_finite(name, &values)?;
        self.detection.insert(name.to_string(), values);
        Ok(())
    }

    /// 1-based stratum labels, one per site.
    pub fn insert_strata(&mut self, name: &str, labels: Vec<usize>) -> Result<()> {
        if labels.len() != self.n_sites {
            return Err(Error::Dataset(format!(
                "stratum column '{name}' has {} labels, expected {}",
                labels.len(),
                self.n_sites
            )));
        }
        if labels.contains(&0) {
            return Err(Error::Dataset(format!(
                "stratum column '{name}' labels must be >= 1"
            )));
        }
        self.strata.insert(name.to_string(), labels);
        Ok(())
    }

    pub fn occurrence(&self, name: &str) -> Option<&[Option<f64>]> {
        self.occurrence.get(name).map(Vec::as_slice)
    }

    pub fn occurrence_value(&self, name: &str, j: usize, t: usize) -> Option<f64> {
        self.occurrence
            .get(name)
            .and_then(|v| v[j * self.n_seasons + t])
    }

    pub fn detection(&self, name: &str) -> Option<&[Option<f64>]> {
        self.detection.get(name).map(Vec::as_slice)
    }

    pub fn detection_value(&self, name: &str, j: usize, t: usize, k: usize) -> Option<f64> {
        self.detection
            .get(name)
            .and_then(|v| v[(j * self.n_seasons + t) * self.n_replicates + k])
    }

    pub fn strata(&self, name: &str) -> Option<&[usize]> {
        self.strata.get(name).map(Vec::as_slice)
    }

    pub fn occurrence_names(&self) -> impl Iterator<Item = &str> {
        self.occurrence.keys().map(String::as_str)
    }

    pub fn detection_names(&self) -> impl Iterator<Item = &str> {
        self.detection.keys().map(String::as_str)
    }

    pub fn strata_names(&self) -> impl Iterator<Item = &str> {
        self.strata.keys().map(String::as_str)
    }

    pub fn transform(&self, name: &str) -> Option<Standardization> {
        self.transforms.get(name).copied()
    }

    pub fn transforms(&self) -> &BTreeMap<String, Standardization> {
        &self.transforms
    }

    /// Standardizes every occurrence and detection covariate in place
    /// (mean 0, sd 1 over non-missing values) and records the transforms.
    pub fn standardize(&mut self) {
        let Self {
            occurrence,
            detection,
            transforms,
            ..
        } = self;
        for (name, values) in occurrence.iter_mut().chain(detection.iter_mut()) {
            let present: Vec<f64> = values.iter().flatten().copied().collect();
            if present.is_empty() {
                continue;
            }
            let n = present.len() as f64;
            let mean = present.iter().sum::<f64>() / n;
            let var = if present.len() > 1 {
                present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            let tr = Standardization { mean, sd };
            for v in values.iter_mut().flatten() {
                *v = tr.apply(*v);
            }
            transforms.insert(name.clone(), tr);
        }
    }
}

fn check_finite(name: &str, values: &[Option<f64>]) -> Result<()> {
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Dataset(format!(
            "covariate '{name}' contains non-finite values"
        )));
    }
    Ok(())
}

/// Column names and covariate roles for the long CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSchema {
    pub site_id: String,
    pub easting: String,
    pub northing: String,
    pub season: String,
    pub replicate: String,
    pub y: String,
    pub occurrence_covariates: Vec<String>,
    pub detection_covariates: Vec<String>,
    pub strata: Vec<String>,
    pub standardize: bool,
}

impl Default for IngestSchema {
    fn default() -> Self {
        Self {
            site_id: "site_id".into(),
            easting: "easting".into(),
            northing: "northing".into(),
            season: "season".into(),
            replicate: "replicate".into(),
            y: "y".into(),
            occurrence_covariates: Vec::new(),
            detection_covariates: Vec::new(),
            strata: Vec::new(),
            standardize: true,
        }
    }
}

/// Observations plus covariates; the unit of serialization and hashing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub data: DetectionData,
    pub covariates: CovariateSet,
}

impl Dataset {
    pub fn to_canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// SHA-256 of the canonical JSON.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_canonical_json()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

struct Row {
    line: usize,
    y: Option<u8>,
    occ: Vec<Option<f64>>,
    det: Vec<Option<f64>>,
    strata: Vec<Option<usize>>,
}

pub fn ingest_long_csv(path: impl AsRef<Path>, schema: &IngestSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_long_csv_reader(file, schema)
}

pub fn ingest_long_csv_reader<R: Read>(reader: R, schema: &IngestSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest {
                row: 1,
                message: format!("missing column '{name}'"),
            })
    };
    let c_site = column(&schema.site_id)?;
    let c_east = column(&schema.easting)?;
    let c_north = column(&schema.northing)?;
    let c_season = column(&schema.season)?;
    let c_rep = column(&schema.replicate)?;
    let c_y = column(&schema.y)?;
    let c_occ: Vec<usize> = schema
        .occurrence_covariates
        .iter()
        .map(|n| column(n))
        .collect::<Result<_>>()?;
    let c_det: Vec<usize> = schema
        .detection_covariates
        .iter()
        .map(|n| column(n))
        .collect::<Result<_>>()?;
    let c_strata: Vec<usize> = schema
        .strata
        .iter()
        .map(|n| column(n))
        .collect::<Result<_>>()?;

    let mut sites: BTreeMap<String, ([f64; 2], usize)> = BTreeMap::new();
    let mut rows: BTreeMap<(String, i64, usize), Row> = BTreeMap::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let err = |message: String| Error::Ingest { row: line, message };
        let cell = |i: usize| record.get(i).unwrap_or("");
        let number = |i: usize, what: &str| -> Result<Option<f64>> {
            let c = cell(i);
            if is_missing(c) {
                return Ok(None);
            }
            match c.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(err(format!("non-numeric value '{c}' in column '{what}'"))),
            }
        };

        let site = cell(c_site).to_string();
        if site.is_empty() {
            return Err(err("empty site identifier".into()));
        }
        let east = number(c_east, &schema.easting)?
            .ok_or_else(|| err(format!("missing '{}'", schema.easting)))?;
        let north = number(c_north, &schema.northing)?
            .ok_or_else(|| err(format!("missing '{}'", schema.northing)))?;
        let season: i64 = cell(c_season)
            .parse()
            .map_err(|_| err(format!("season '{}' is not an integer", cell(c_season))))?;
        let replicate: usize = match cell(c_rep).parse() {
            Ok(k) if k >= 1 => k,
            _ => {
                return Err(err(format!(
                    "replicate '{}' is not a positive integer",
                    cell(c_rep)
                )))
            }
        };
        let y = match cell(c_y) {
            "0" => Some(0u8),
            "1" => Some(1u8),
            c if is_missing(c) => None,
            c => return Err(err(format!("y value '{c}' is not 0, 1 or missing"))),
        };
        let occ = c_occ
            .iter()
            .zip(&schema.occurrence_covariates)
            .map(|(&i, n)| number(i, n))
            .collect::<Result<Vec<_>>>()?;
        let det = c_det
            .iter()
            .zip(&schema.detection_covariates)
            .map(|(&i, n)| number(i, n))
            .collect::<Result<Vec<_>>>()?;
        let strata = c_strata
            .iter()
            .zip(&schema.strata)
            .map(|(&i, n)| {
                let c = cell(i);
                if is_missing(c) {
                    return Ok(None);
                }
                match c.parse::<usize>() {
                    Ok(s) if s >= 1 => Ok(Some(s)),
                    _ => Err(err(format!(
                        "stratum label '{c}' in column '{n}' is not a positive integer"
                    ))),
                }
            })
            .collect::<Result<Vec<_>>>()?;

        match sites.get(&site) {
            Some((xy, first)) if *xy != [east, north] => {
                return Err(err(format!(
                    "site '{site}' has coordinates ({east}, {north}) but ({}, {}) at row {first}",
                    xy[0], xy[1]
                )));
            }
            Some(_) => {}
            None => {
                sites.insert(site.clone(), ([east, north], line));
            }
        }

        let key = (site, season, replicate);
        if let Some(prev) = rows.get(&key) {
            return Err(err(format!(
                "duplicate (site, season, replicate) = ({}, {}, {}); first seen at row {}",
                key.0, key.1, key.2, prev.line
            )));
        }
        rows.insert(
            key,
            Row {
                line,
                y,
                occ,
                det,
                strata,
            },
        );
    }

    if rows.is_empty() {
        return Err(Error::Dataset("no data rows".into()));
    }

    let site_ids: Vec<String> = sites.keys().cloned().collect();
    let points: Vec<[f64; 2]> = sites.values().map(|(xy, _)| *xy).collect();
    let coordinates = SpatialCoordinates::new(site_ids, points)?;
    let seasons: Vec<i64> = rows
        .keys()
        .map(|(_, s, _)| *s)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_rep = rows.keys().map(|(_, _, k)| *k).max().unwrap_or(1);
    let (nj, nt) = (coordinates.len(), seasons.len());
    let site_pos = |id: &str| coordinates.site_ids().binary_search_by(|s| s.as_str().cmp(id)).ok();

    let mut y = vec![None; nj * nt * n_rep];
    let mut occ = vec![vec![None; nj * nt]; c_occ.len()];
    let mut occ_line = vec![vec![0usize; nj * nt]; c_occ.len()];
    let mut det = vec![vec![None; nj * nt * n_rep]; c_det.len()];
    let mut strata: Vec<Vec<Option<usize>>> = vec![vec![None; nj]; c_strata.len()];

    for ((site, season, rep), row) in &rows {
        let j = site_pos(site).expect("site registered");
        let t = seasons.binary_search(season).expect("season registered");
        let unit = j * nt + t;
        let cell = unit * n_rep + (rep - 1);
        y[cell] = row.y;
        for (c, v) in row.occ.iter().enumerate() {
            if let Some(v) = *v {
                match occ[c][unit] {
                    Some(prev) if prev != v => {
                        return Err(Error::Ingest {
                            row: row.line,
                            message: format!(
                                "occurrence covariate '{}' differs between replicates of site '{site}' season {season} (row {} has {prev})",
                                schema.occurrence_covariates[c], occ_line[c][unit]
                            ),
                        });
                    }
                    _ => {
                        occ[c][unit] = Some(v);
                        occ_line[c][unit] = row.line;
                    }
                }
            }
        }
        for (c, v) in row.det.iter().enumerate() {
            det[c][cell] = *v;
        }
        for (c, v) in row.strata.iter().enumerate() {
            if let Some(v) = *v {
                match strata[c][j] {
                    Some(prev) if prev != v => {
                        return Err(Error::Ingest {
                            row: row.line,
                            message: format!(
                                "stratum column '{}' changes from {prev} to {v} within site '{site}'",
                                schema.strata[c]
                            ),
                        });
                    }
                    _ => strata[c][j] = Some(v),
                }
            }
        }
    }

    let data = DetectionData::new(coordinates, seasons, n_rep, y)?;

    for (c, name) in schema.occurrence_covariates.iter().enumerate() {
        for (j, t) in data.sampled_units() {
            if occ[c][j * nt + t].is_none() {
                return Err(Error::Dataset(format!(
                    "occurrence covariate '{name}' missing at sampled site '{}' season {}",
                    data.coordinates().site_ids()[j],
                    data.seasons()[t]
                )));
            }
        }
    }
    for (c, name) in schema.detection_covariates.iter().enumerate() {
        for (i, v) in data.raw().iter().enumerate() {
            if v.is_some() && det[c][i].is_none() {
                let j = i / (nt * n_rep);
                let t = (i / n_rep) % nt;
                return Err(Error::Dataset(format!(
                    "detection covariate '{name}' missing at observed survey (site '{}', season {}, replicate {})",
                    data.coordinates().site_ids()[j],
                    data.seasons()[t],
                    i % n_rep + 1
                )));
            }
        }
    }

    let mut covs = CovariateSet::for_data(&data);
    for (name, values) in schema.occurrence_covariates.iter().zip(occ) {
        covs.insert_occurrence(name, values)?;
    }
    for (name, values) in schema.detection_covariates.iter().zip(det) {
        covs.insert_detection(name, values)?;
    }
    for (name, labels) in schema.strata.iter().zip(strata) {
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(j, l)| {
                l.ok_or_else(|| {
                    Error::Dataset(format!(
                        "stratum column '{name}' has no label for site '{}'",
                        data.coordinates().site_ids()[j]
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        covs.insert_strata(name, labels)?;
    }
    if schema.standardize {
        covs.standardize();
    }
    Ok(Dataset {
        data,
        covariates: covs,
    })
}

/// Writes the long CSV with default column names. Covariates are written as
/// stored (i.e. standardized when ingest standardized them).
pub fn write_long_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let Dataset {
        data,
        covariates: covs,
    } = dataset;
    let schema = IngestSchema::default();
    let occ_names: Vec<&str> = covs.occurrence_names().collect();
    let det_names: Vec<&str> = covs.detection_names().collect();
    let strata_names: Vec<&str> = covs.strata_names().collect();

    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.site_id.as_str(),
        &schema.easting,
        &schema.northing,
        &schema.season,
        &schema.replicate,
        &schema.y,
    ];
    header.extend(&occ_names);
    header.extend(&det_names);
    header.extend(&strata_names);
    w.write_record(&header)?;

    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let (nj, nt, nk) = (data.n_sites(), data.n_seasons(), data.n_replicates());
    let mut wrote_last_replicate = false;
    for j in 0..nj {
        for t in 0..nt {
            let occ_present = occ_names
                .iter()
                .any(|n| covs.occurrence_value(n, j, t).is_some());
            let sampled = data.is_sampled(j, t);
            for k in 0..nk {
                let det_present = det_names
                    .iter()
                    .any(|n| covs.detection_value(n, j, t, k).is_some());
                let keep = data.get(j, t, k).is_some()
                    || det_present
                    || (k == 0 && occ_present && !sampled)
                    || (k == nk - 1 && j == nj - 1 && t == nt - 1 && !wrote_last_replicate);
                if !keep {
                    continue;
                }
                if k == nk - 1 {
                    wrote_last_replicate = true;
                }
                let p = data.coordinates().point(j);
                let mut rec = vec![
                    data.coordinates().site_ids()[j].clone(),
                    p[0].to_string(),
                    p[1].to_string(),
                    data.seasons()[t].to_string(),
                    (k + 1).to_string(),
                    data.get(j, t, k).map(|v| v.to_string()).unwrap_or_default(),
                ];
                rec.extend(occ_names.iter().map(|n| fmt(covs.occurrence_value(n, j, t))));
                rec.extend(det_names.iter().map(|n| fmt(covs.detection_value(n, j, t, k))));
                rec.extend(
                    strata_names
                        .iter()
                        .map(|n| covs.strata(n).expect("known stratum")[j].to_string()),
                );
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Schema that re-ingests the output of [`write_long_csv`] unchanged.
pub fn schema_for(covs: &CovariateSet) -> IngestSchema {
    IngestSchema {
        occurrence_covariates: covs.occurrence_names().map(String::from).collect(),
        detection_covariates: covs.detection_names().map(String::from).collect(),
        strata: covs.strata_names().map(String::from).collect(),
        standardize: false,
        ..IngestSchema::default()
    }
}
