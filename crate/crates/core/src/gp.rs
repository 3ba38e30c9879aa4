//! Exponential-correlation Gaussian processes and their nearest-neighbor
//! (NNGP) approximation.
//!
//! Sites are ordered by the sum of their coordinates; each site conditions on
//! at most `m` nearest sites that precede it in that order. The joint density
//! factorizes as
//!
//! ```text
//! p(w) = prod_j N(w_j | b_j' w_N(j), f_j)
//! b_j  = C_N(j),N(j)^-1 c_j,N(j)
//! f_j  = sigma^2 - c_j,N(j)' C_N(j),N(j)^-1 c_j,N(j)
//! ```
//!
//! Weights depend only on the decay `phi`, so they are stored on the
//! correlation scale together with unit-variance conditional variances; the
//! spatial variance multiplies in at use.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::euclidean;
use crate::error::{Error, Result};
use crate::linalg;

/// `exp(-phi * d)`.
pub fn exp_correlation(d: f64, phi: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Argument(format!("distance must be >= 0, got {d}")));
    }
    if !(phi > 0.0) {
        return Err(Error::Argument(format!("decay must be > 0, got {phi}")));
    }
    Ok((-phi * d).exp())
}

#[inline]
fn corr(d: f64, phi: f64) -> f64 {
    (-phi * d).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams {
    pub sigma_sq: f64,
    pub phi: f64,
}

impl SpatialParams {
    pub fn new(sigma_sq: f64, phi: f64) -> Result<Self> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::Argument(format!(
                "spatial variance must be finite and > 0, got {sigma_sq}"
            )));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Argument(format!(
                "spatial decay must be finite and > 0, got {phi}"
            )));
        }
        Ok(Self { sigma_sq, phi })
    }
}

/// Values of a latent spatial surface at the data sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSurface {
    pub values: Vec<f64>,
    pub params: SpatialParams,
}

/// Site order: ascending `easting + northing`, ties by site index.
pub fn nngp_ordering(points: &[[f64; 2]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = points[a][0] + points[a][1];
        let sb = points[b][0] + points[b][1];
        sa.total_cmp(&sb).then(a.cmp(&b))
    });
    order
}

/// Neighbor sets and the distances the weights need. Independent of the
/// covariance parameters, so built once per coordinate set.
#[derive(Debug, Clone)]
pub struct NeighborSets {
    order: Vec<usize>,
    position: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    site_dists: Vec<Vec<f64>>,
    pair_dists: Vec<Vec<f64>>,
    children: Vec<Vec<(usize, usize)>>,
    max_size: usize,
}

impl NeighborSets {
    pub fn build(points: &[[f64; 2]], m: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("at least one site is required".into()));
        }
        if m == 0 {
            return Err(Error::Argument("neighbor count must be >= 1".into()));
        }
        let n = points.len();
        let order = nngp_ordering(points);
        let mut position = vec![0; n];
        for (p, &s) in order.iter().enumerate() {
            position[s] = p;
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut site_dists = vec![Vec::new(); n];
        let mut pair_dists = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
        for (p, &site) in order.iter().enumerate() {
            if p == 0 {
                continue;
            }
            cand.clear();
            cand.extend((0..p).map(|q| (euclidean(points[site], points[order[q]]), q)));
            let k = m.min(p);
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_dist);
                cand.truncate(k);
            }
            cand.sort_by(by_dist);
            let nb: Vec<usize> = cand.iter().map(|&(_, q)| order[q]).collect();
            let mut pd = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    pd[a * k + b] = euclidean(points[nb[a]], points[nb[b]]);
                }
            }
            for (r, &s) in nb.iter().enumerate() {
                children[s].push((site, r));
            }
            site_dists[site] = cand.iter().map(|&(d, _)| d).collect();
            pair_dists[site] = pd;
            neighbors[site] = nb;
        }
        Ok(Self {
            order,
            position,
            neighbors,
            site_dists,
            pair_dists,
            children,
            max_size: m,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn m(&self) -> usize {
        self.max_size
    }

    /// Sites in conditioning order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position(&self, site: usize) -> usize {
        self.position[site]
    }

    pub fn neighbors(&self, site: usize) -> &[usize] {
        &self.neighbors[site]
    }

    /// Sites that list `site` as a neighbor, with the slot it occupies there.
    pub fn children(&self, site: usize) -> &[(usize, usize)] {
        &self.children[site]
    }
}

#[derive(Debug, Clone)]
pub struct NngpStructure {
    sets: Arc<NeighborSets>,
    weights: Vec<Vec<f64>>,
    unit_var: Vec<f64>,
    params: SpatialParams,
}

impl NngpStructure {
    pub fn new(sets: Arc<NeighborSets>, params: SpatialParams) -> Result<Self> {
        let n = sets.len();
        let mut weights = vec![Vec::new(); n];
        let mut unit_var = vec![1.0; n];
        let mut work = Vec::new();
        for site in 0..n {
            let k = sets.neighbors[site].len();
            if k == 0 {
                continue;
            }
            work.clear();
            work.extend(sets.pair_dists[site].iter().map(|&d| corr(d, params.phi)));
            if !linalg::cholesky(&mut work, k) {
                return Err(Error::Numeric(format!(
                    "neighbor correlation matrix of site {site} is not positive definite"
                )));
            }
            let c: Vec<f64> = sets.site_dists[site]
                .iter()
                .map(|&d| corr(d, params.phi))
                .collect();
            let mut b = c.clone();
            linalg::cholesky_solve(&work, k, &mut b);
            let f = 1.0 - linalg::dot(&c, &b);
            if !(f > 0.0) {
                return Err(Error::Numeric(format!(
                    "non-positive conditional variance at site {site} (phi = {})",
                    params.phi
                )));
            }
            weights[site] = b;
            unit_var[site] = f.min(1.0);
        }
        Ok(Self {
            sets,
            weights,
            unit_var,
            params,
        })
    }

    /// Same neighbor sets under new parameters; weights are reused when only
    /// the variance changes.
    pub fn with_params(&self, params: SpatialParams) -> Result<Self> {
        if params.phi == self.params.phi {
            let mut s = self.clone();
            s.params = params;
            return Ok(s);
        }
        Self::new(self.sets.clone(), params)
    }

    pub fn params(&self) -> SpatialParams {
        self.params
    }

    pub fn sets(&self) -> &Arc<NeighborSets> {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn neighbors(&self, site: usize) -> &[usize] {
        self.sets.neighbors(site)
    }

    pub fn weights(&self, site: usize) -> &[f64] {
        &self.weights[site]
    }

    /// Conditional variance `f_j`.
    pub fn cond_var(&self, site: usize) -> f64 {
        self.params.sigma_sq * self.unit_var[site]
    }

    /// Conditional variance on the unit-variance scale.
    pub fn unit_cond_var(&self, site: usize) -> f64 {
        self.unit_var[site]
    }

    /// Conditional mean `b_j' w_N(j)`.
    pub fn cond_mean(&self, site: usize, w: &[f64]) -> f64 {
        self.sets.neighbors[site]
            .iter()
            .zip(&self.weights[site])
            .map(|(&s, b)| b * w[s])
            .sum()
    }

    /// `sum_j (w_j - b_j' w_N(j))^2 / f~_j` with unit-variance `f~`.
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        (0..self.len())
            .map(|j| {
                let r = w[j] - self.cond_mean(j, w);
                r * r / self.unit_var[j]
            })
            .sum()
    }

    pub fn log_det_unit(&self) -> f64 {
        self.unit_var.iter().map(|f| f.ln()).sum()
    }
}

pub fn build_nngp(points: &[[f64; 2]], m: usize, params: SpatialParams) -> Result<NngpStructure> {
    NngpStructure::new(Arc::new(NeighborSets::build(points, m)?), params)
}

pub fn nngp_log_density(w: &[f64], s: &NngpStructure) -> Result<f64> {
    if w.len() != s.len() {
        return Err(Error::Contract(format!(
            "surface has {} values but the structure has {} sites",
            w.len(),
            s.len()
        )));
    }
    let n = w.len() as f64;
    let sigma_sq = s.params.sigma_sq;
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI * sigma_sq).ln()
        - 0.5 * s.log_det_unit()
        - 0.5 * s.quadratic_form(w) / sigma_sq)
}

/// Sequential conditional draw in the NNGP order.
pub fn nngp_simulate<R: Rng + ?Sized>(s: &NngpStructure, rng: &mut R) -> GpSurface {
    let mut w = vec![0.0; s.len()];
    for &site in s.sets.order() {
        let z: f64 = StandardNormal.sample(rng);
        w[site] = s.cond_mean(site, &w) + s.cond_var(site).sqrt() * z;
    }
    GpSurface {
        values: w,
        params: s.params,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingPrediction {
    pub mean: f64,
    pub var: f64,
}

/// Nearest observed sites of each prediction location; independent of the
/// covariance parameters, so it can be reused across posterior draws.
#[derive(Debug, Clone)]
pub struct KrigingPlan {
    m: usize,
    /// Per location: `(distance, observed site)` sorted by distance then index.
    neighbors: Vec<Vec<(f64, usize)>>,
    /// Per location: distances among its neighbors (m x m, row-major).
    pair_dists: Vec<Vec<f64>>,
    n_observed: usize,
}

impl KrigingPlan {
    /// Uses the `m` nearest observed sites (ties by site index).
    pub fn build(new_points: &[[f64; 2]], points: &[[f64; 2]], m: usize) -> Result<Self> {
        if m == 0 || points.len() < m {
            return Err(Error::Argument(format!(
                "kriging with m = {m} needs at least m observed sites, found {}",
                points.len()
            )));
        }
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let mut neighbors = Vec::with_capacity(new_points.len());
        let mut pair_dists = Vec::with_capacity(new_points.len());
        for &p in new_points {
            let mut cand: Vec<(f64, usize)> =
                points.iter().enumerate().map(|(i, &q)| (euclidean(p, q), i)).collect();
            if m < cand.len() {
                cand.select_nth_unstable_by(m - 1, by_dist);
                cand.truncate(m);
            }
            cand.sort_by(by_dist);
            let mut d = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    d[a * m + b] = euclidean(points[cand[a].1], points[cand[b].1]);
                }
            }
            neighbors.push(cand);
            pair_dists.push(d);
        }
        Ok(Self {
            m,
            neighbors,
            pair_dists,
            n_observed: points.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Predictive mean and variance at every planned location.
    pub fn predict(&self, observed: &[f64], params: SpatialParams) -> Result<Vec<KrigingPrediction>> {
        if observed.len() != self.n_observed {
            return Err(Error::Contract(format!(
                "{} observed values for {} sites",
                observed.len(),
                self.n_observed
            )));
        }
        let m = self.m;
        let mut work = vec![0.0; m * m];
        self.neighbors
            .iter()
            .zip(&self.pair_dists)
            .map(|(cand, dists)| {
                if cand[0].0 == 0.0 {
                    return Ok(KrigingPrediction {
                        mean: observed[cand[0].1],
                        var: 0.0,
                    });
                }
                for (w, &d) in work.iter_mut().zip(dists) {
                    *w = corr(d, params.phi);
                }
                if !linalg::cholesky(&mut work, m) {
                    return Err(Error::Numeric(
                        "kriging neighbor correlation matrix is not positive definite".into(),
                    ));
                }
                let c: Vec<f64> = cand.iter().map(|&(d, _)| corr(d, params.phi)).collect();
                let mut b = c.clone();
                linalg::cholesky_solve(&work, m, &mut b);
                let mean = cand
                    .iter()
                    .zip(&b)
                    .map(|(&(_, i), bi)| bi * observed[i])
                    .sum();
                let var = params.sigma_sq * (1.0 - linalg::dot(&c, &b)).max(0.0);
                Ok(KrigingPrediction { mean, var })
            })
            .collect()
    }
}

/// NNGP predictive conditional at new locations from the `m` nearest observed
/// sites (ties by site index). A new location that coincides with an observed
/// site returns that site's value with zero variance.
pub fn krige_predict(
    new_points: &[[f64; 2]],
    observed: &[f64],
    points: &[[f64; 2]],
    m: usize,
    params: SpatialParams,
) -> Result<Vec<KrigingPrediction>> {
    if observed.len() != points.len() {
        return Err(Error::Contract(format!(
            "{} observed values for {} sites",
            observed.len(),
            points.len()
        )));
    }
    KrigingPlan::build(new_points, points, m)?.predict(observed, params)
}

/// Dense exponential covariance matrix (row-major).
pub fn dense_covariance(points: &[[f64; 2]], params: SpatialParams) -> Vec<f64> {
    let n = points.len();
    let mut c = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            c[a * n + b] = params.sigma_sq * corr(euclidean(points[a], points[b]), params.phi);
        }
    }
    c
}

/// Exact (dense Cholesky) draw from the full GP; O(J^3), for simulation only.
pub fn dense_gp_simulate<R: Rng + ?Sized>(
    points: &[[f64; 2]],
    params: SpatialParams,
    rng: &mut R,
) -> Result<GpSurface> {
    let n = points.len();
    let mut l = dense_covariance(points, params);
    if !linalg::cholesky(&mut l, n) {
        return Err(Error::Numeric("GP covariance is not positive definite".into()));
    }
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let values = (0..n)
        .map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum())
        .collect();
    Ok(GpSurface { values, params })
}
