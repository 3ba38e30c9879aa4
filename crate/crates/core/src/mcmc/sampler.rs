//! Single-chain Gibbs sampler.
//!
//! Pólya-Gamma augmentation makes both logit regressions conditionally
//! Gaussian. Coefficient blocks are drawn jointly; NNGP surfaces are updated
//! site by site from their exact full conditionals; the spatial variance is
//! conjugate and the decay uses random-walk Metropolis on a logit scale;
//! the AR(1) year effects are drawn jointly with a conjugate variance and a
//! random-walk correlation.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{nngp_log_density, NeighborSets, NngpStructure, SpatialParams};
use crate::linalg;
use crate::mcmc::pg::sample_polya_gamma;
use crate::model::{
    logistic, marginal_unit_loglik_logit, z_conditional_prob_logit, Ar1Params, DetectionDesign,
    OccurrenceDesign,
};
use crate::spec::{InverseGammaPrior, McmcConfig, UniformPrior, ValidatedSpec, YearEffect};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Occurrence,
    Detection,
}

/// Which latent surface: the spatial intercept or the i-th SVC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceId {
    Intercept,
    Svc(usize),
}

#[derive(Debug, Clone)]
pub struct SurfaceState {
    pub w: Vec<f64>,
    pub nngp: NngpStructure,
}

impl SurfaceState {
    pub fn params(&self) -> SpatialParams {
        self.nngp.params()
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Variances of the stratum random-slope groups.
    pub tau_sq: Vec<f64>,
    /// Latent occupancy per site-season (site-major).
    pub z: Vec<u8>,
    /// Occurrence PG auxiliaries, one per sampled site-season.
    pub omega_occ: Vec<f64>,
    /// Detection PG auxiliaries, one per observed survey (0 where z = 0).
    pub omega_det: Vec<f64>,
    pub w0: Option<SurfaceState>,
    pub w1: Vec<SurfaceState>,
    pub eta: Option<Vec<f64>>,
    pub ar1: Option<Ar1Params>,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
struct Unit {
    idx: usize,
    rows: Range<usize>,
    detected: bool,
}

/// One chain's sampler: precomputed design plus mutable state.
pub struct Sampler {
    n_sites: usize,
    n_seasons: usize,
    occ_design: OccurrenceDesign,
    det_design: DetectionDesign,
    /// Occurrence rows for every site-season (zero rows where unavailable).
    occ_x: Vec<f64>,
    occ_available: Vec<bool>,
    /// Covariate multiplying each SVC surface, per site-season.
    svc_x: Vec<Vec<f64>>,
    units: Vec<Unit>,
    unit_of: Vec<Option<usize>>,
    det_x: Vec<f64>,
    det_y: Vec<u8>,
    site_idx: Vec<Vec<usize>>,
    beta_prior_prec: Vec<f64>,
    beta_prior_mean: Vec<f64>,
    alpha_prior_prec: f64,
    alpha_prior_mean: f64,
    random_groups: Vec<Vec<usize>>,
    stratum_prior: InverseGammaPrior,
    sigma_sq_prior: InverseGammaPrior,
    ar1_var_prior: InverseGammaPrior,
    phi_bounds: UniformPrior,
    phi_sd: f64,
    rho_sd: f64,
    state: ChainState,
    occ_lin: Vec<f64>,
    det_lin: Vec<f64>,
    rng: ChaCha8Rng,
}

fn inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive inverse-gamma parameters");
    1.0 / g.sample(rng)
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws from `N(P^-1 b, P^-1)` given the precision `p` (overwritten with its
/// Cholesky factor) and `b`.
fn gaussian_from_precision<R: Rng + ?Sized>(
    p: &mut [f64],
    b: &mut [f64],
    n: usize,
    rng: &mut R,
    what: &str,
) -> Result<Vec<f64>> {
    if !linalg::cholesky(p, n) {
        return Err(Error::Numeric(format!(
            "{what} full-conditional precision is not positive definite"
        )));
    }
    linalg::cholesky_solve(p, n, b);
    let mut e: Vec<f64> = (0..n).map(|_| std_normal(rng)).collect();
    linalg::solve_lower_transpose(p, n, &mut e);
    Ok(b.iter().zip(&e).map(|(m, z)| m + z).collect())
}

/// Inverse of the AR(1) correlation matrix `R_ts = rho^|t-s|` (tridiagonal).
pub fn ar1_inverse_correlation(rho: f64, n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n * n];
    if n == 1 {
        q[0] = 1.0;
        return q;
    }
    let s = 1.0 / (1.0 - rho * rho);
    for t in 0..n {
        q[t * n + t] = if t == 0 || t == n - 1 { s } else { (1.0 + rho * rho) * s };
        if t + 1 < n {
            q[t * n + t + 1] = -rho * s;
            q[(t + 1) * n + t] = -rho * s;
        }
    }
    q
}

/// Log density of `N(0, sigma_sq * R(rho))` at `eta`.
pub fn ar1_log_density(eta: &[f64], rho: f64, sigma_sq: f64) -> f64 {
    let n = eta.len();
    let q = ar1_inverse_correlation(rho, n);
    let mut quad = 0.0;
    for a in 0..n {
        for b in 0..n {
            quad += eta[a] * q[a * n + b] * eta[b];
        }
    }
    let log_det_r = (n as f64 - 1.0) * (1.0 - rho * rho).ln();
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma_sq).ln() - 0.5 * log_det_r - 0.5 * quad / sigma_sq
}

impl Sampler {
    pub fn new(
        dataset: &Dataset,
        spec: &ValidatedSpec,
        config: &McmcConfig,
        chain: usize,
    ) -> Result<Self> {
        config.validate()?;
        let data = &dataset.data;
        let covs = &dataset.covariates;
        let (nj, nt, nk) = (data.n_sites(), data.n_seasons(), data.n_replicates());
        let occ_design = OccurrenceDesign::new(spec, covs)?;
        let det_design = DetectionDesign::new(spec, nk);
        let p = occ_design.n_columns();
        let q = det_design.n_columns();

        let mut occ_x = vec![0.0; nj * nt * p];
        let mut occ_available = vec![false; nj * nt];
        let mut svc_x = vec![vec![0.0; nj * nt]; occ_design.svc.len()];
        for j in 0..nj {
            for t in 0..nt {
                let idx = j * nt + t;
                let row = occ_design.row(covs, j, t);
                let svc: Option<Vec<f64>> = occ_design
                    .svc
                    .iter()
                    .map(|c| covs.occurrence_value(c, j, t))
                    .collect();
                if let (Some(row), Some(svc)) = (row, svc) {
                    occ_x[idx * p..(idx + 1) * p].copy_from_slice(&row);
                    for (s, v) in svc.into_iter().enumerate() {
                        svc_x[s][idx] = v;
                    }
                    occ_available[idx] = true;
                }
            }
        }

        let mut units = Vec::new();
        let mut unit_of = vec![None; nj * nt];
        let mut det_x = Vec::new();
        let mut det_y = Vec::new();
        for j in 0..nj {
            for t in 0..nt {
                let idx = j * nt + t;
                let start = det_y.len();
                let mut detected = false;
                for (k, y) in data.observations(j, t) {
                    let row = det_design.row(covs, j, t, k).ok_or_else(|| {
                        Error::Contract(format!(
                            "missing detection covariate at site {j} season {t} replicate {k}"
                        ))
                    })?;
                    det_x.extend(row);
                    det_y.push(y);
                    detected |= y == 1;
                }
                if det_y.len() > start {
                    if !occ_available[idx] {
                        return Err(Error::Contract(format!(
                            "missing occurrence covariate at sampled site {j} season {t}"
                        )));
                    }
                    unit_of[idx] = Some(units.len());
                    units.push(Unit {
                        idx,
                        rows: start..det_y.len(),
                        detected,
                    });
                }
            }
        }
        let site_idx = (0..nj)
            .map(|j| (0..nt).map(|t| j * nt + t).filter(|&i| occ_available[i]).collect())
            .collect();

        let priors = &spec.priors;
        let mut beta_prior_prec = vec![1.0 / priors.beta.var; p];
        let mut beta_prior_mean = vec![priors.beta.mean; p];
        let random_groups: Vec<Vec<usize>> =
            occ_design.groups.iter().map(|(_, idx)| idx.clone()).collect();
        for g in &random_groups {
            for &i in g {
                beta_prior_prec[i] = 1.0;
                beta_prior_mean[i] = 0.0;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(chain as u64);

        let phi_bounds = priors.phi_bounds(data)?;
        let phi0 = 0.5 * (phi_bounds.lower + phi_bounds.upper);
        let sets = if spec.has_spatial_process() {
            Some(Arc::new(NeighborSets::build(
                data.coordinates().points(),
                config.n_neighbors,
            )?))
        } else {
            None
        };
        let new_surface = || -> Result<SurfaceState> {
            let sets = sets.clone().expect("neighbor sets for spatial model");
            Ok(SurfaceState {
                w: vec![0.0; nj],
                nngp: NngpStructure::new(sets, SpatialParams::new(1.0, phi0)?)?,
            })
        };
        let w0 = if spec.spatial_intercept {
            Some(new_surface()?)
        } else {
            None
        };
        let w1 = occ_design
            .svc
            .iter()
            .map(|_| new_surface())
            .collect::<Result<Vec<_>>>()?;
        let ar1 = spec.year_effect == YearEffect::Ar1;

        let mut z = vec![0u8; nj * nt];
        for (i, zi) in z.iter_mut().enumerate() {
            let detected = unit_of[i].is_some_and(|u| units[u].detected);
            *zi = if detected {
                1
            } else if occ_available[i] && rng.random::<f64>() < 0.5 {
                1
            } else {
                0
            };
        }

        let state = ChainState {
            beta: vec![0.0; p],
            alpha: vec![0.0; q],
            tau_sq: vec![1.0; random_groups.len()],
            z,
            omega_occ: vec![0.0; units.len()],
            omega_det: vec![0.0; det_y.len()],
            w0,
            w1,
            eta: ar1.then(|| vec![0.0; nt]),
            ar1: ar1.then_some(Ar1Params {
                rho: 0.0,
                sigma_sq: 1.0,
            }),
            iteration: 0,
        };
        let n_det = det_y.len();
        let mut s = Self {
            n_sites: nj,
            n_seasons: nt,
            occ_design,
            det_design,
            occ_x,
            occ_available,
            svc_x,
            units,
            unit_of,
            det_x,
            det_y,
            site_idx,
            beta_prior_prec,
            beta_prior_mean,
            alpha_prior_prec: 1.0 / priors.alpha.var,
            alpha_prior_mean: priors.alpha.mean,
            random_groups,
            stratum_prior: priors.stratum_var,
            sigma_sq_prior: priors.sigma_sq,
            ar1_var_prior: priors.ar1_var,
            phi_bounds,
            phi_sd: config.phi_proposal_sd,
            rho_sd: config.rho_proposal_sd,
            state,
            occ_lin: vec![0.0; nj * nt],
            det_lin: vec![0.0; n_det],
            rng,
        };
        s.refresh();
        Ok(s)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    /// Mutates the state and recomputes the cached linear predictors.
    pub fn with_state<F: FnOnce(&mut ChainState)>(&mut self, f: F) {
        f(&mut self.state);
        self.refresh();
    }

    pub fn occurrence_design(&self) -> &OccurrenceDesign {
        &self.occ_design
    }

    pub fn detection_design(&self) -> &DetectionDesign {
        &self.det_design
    }

    pub fn phi_bounds(&self) -> UniformPrior {
        self.phi_bounds
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// `(site, season)` of each sampled site-season.
    pub fn unit_labels(&self) -> Vec<(usize, usize)> {
        self.units
            .iter()
            .map(|u| (u.idx / self.n_seasons, u.idx % self.n_seasons))
            .collect()
    }

    /// Current occurrence linear predictor at a site-season.
    pub fn occurrence_logit(&self, j: usize, t: usize) -> Option<f64> {
        let idx = j * self.n_seasons + t;
        self.occ_available[idx].then(|| self.occ_lin[idx])
    }

    /// Current detection linear predictors of the observed surveys of a site-season.
    pub fn detection_logits(&self, j: usize, t: usize) -> Vec<f64> {
        match self.unit_of[j * self.n_seasons + t] {
            Some(u) => self.det_lin[self.units[u].rows.clone()].to_vec(),
            None => Vec::new(),
        }
    }

    fn surface(&self, id: SurfaceId) -> &SurfaceState {
        match id {
            SurfaceId::Intercept => self.state.w0.as_ref().expect("spatial intercept present"),
            SurfaceId::Svc(i) => &self.state.w1[i],
        }
    }

    fn surface_mut(&mut self, id: SurfaceId) -> &mut SurfaceState {
        match id {
            SurfaceId::Intercept => self.state.w0.as_mut().expect("spatial intercept present"),
            SurfaceId::Svc(i) => &mut self.state.w1[i],
        }
    }

    /// Design weight of a surface at a site-season.
    fn surface_weight(&self, id: SurfaceId, idx: usize) -> f64 {
        match id {
            SurfaceId::Intercept => 1.0,
            SurfaceId::Svc(i) => self.svc_x[i][idx],
        }
    }

    pub fn surfaces(&self) -> Vec<SurfaceId> {
        let mut v = Vec::new();
        if self.state.w0.is_some() {
            v.push(SurfaceId::Intercept);
        }
        v.extend((0..self.state.w1.len()).map(SurfaceId::Svc));
        v
    }

    fn fixed_part(&self, idx: usize) -> f64 {
        let p = self.occ_design.n_columns();
        linalg::dot(&self.occ_x[idx * p..(idx + 1) * p], &self.state.beta)
    }

    fn refresh_occurrence(&mut self) {
        let nt = self.n_seasons;
        for idx in 0..self.occ_lin.len() {
            if !self.occ_available[idx] {
                self.occ_lin[idx] = 0.0;
                continue;
            }
            let (j, t) = (idx / nt, idx % nt);
            let mut v = self.fixed_part(idx);
            if let Some(w0) = &self.state.w0 {
                v += w0.w[j];
            }
            for (s, w1) in self.state.w1.iter().enumerate() {
                v += w1.w[j] * self.svc_x[s][idx];
            }
            if let Some(eta) = &self.state.eta {
                v += eta[t];
            }
            self.occ_lin[idx] = v;
        }
    }

    fn refresh_detection(&mut self) {
        let q = self.det_design.n_columns();
        for (r, lin) in self.det_lin.iter_mut().enumerate() {
            *lin = linalg::dot(&self.det_x[r * q..(r + 1) * q], &self.state.alpha);
        }
    }

    fn refresh(&mut self) {
        self.refresh_occurrence();
        self.refresh_detection();
    }

    /// Draws the latent occupancy states.
    pub fn update_z(&mut self) {
        for idx in 0..self.state.z.len() {
            let z = match self.unit_of[idx] {
                Some(u) => {
                    let unit = &self.units[u];
                    if unit.detected {
                        1
                    } else {
                        let pz = z_conditional_prob_logit(
                            self.occ_lin[idx],
                            &self.det_lin[unit.rows.clone()],
                        );
                        u8::from(self.rng.random::<f64>() < pz)
                    }
                }
                None if self.occ_available[idx] => {
                    u8::from(self.rng.random::<f64>() < logistic(self.occ_lin[idx]))
                }
                None => 0,
            };
            self.state.z[idx] = z;
        }
    }

    /// Draws all Pólya-Gamma auxiliaries given the current linear predictors.
    pub fn update_omega(&mut self) {
        for (u, unit) in self.units.iter().enumerate() {
            self.state.omega_occ[u] = sample_polya_gamma(self.occ_lin[unit.idx], &mut self.rng);
            let present = self.state.z[unit.idx] == 1;
            for r in unit.rows.clone() {
                self.state.omega_det[r] = if present {
                    sample_polya_gamma(self.det_lin[r], &mut self.rng)
                } else {
                    0.0
                };
            }
        }
    }

    /// Joint Gaussian draw of one coefficient block from its conjugate full
    /// conditional. The occurrence block also redraws stratum variances.
    pub fn update_regression_block(&mut self, block: Block) -> Result<()> {
        match block {
            Block::Occurrence => self.update_occurrence_block(),
            Block::Detection => self.update_detection_block(),
        }
    }

    fn update_occurrence_block(&mut self) -> Result<()> {
        let p = self.occ_design.n_columns();
        if p == 0 {
            return Ok(());
        }
        let mut prec = vec![0.0; p * p];
        let mut b = vec![0.0; p];
        for i in 0..p {
            prec[i * p + i] = self.beta_prior_prec[i];
            b[i] = self.beta_prior_prec[i] * self.beta_prior_mean[i];
        }
        for (g, cols) in self.random_groups.iter().enumerate() {
            for &i in cols {
                prec[i * p + i] = 1.0 / self.state.tau_sq[g];
                b[i] = 0.0;
            }
        }
        for (u, unit) in self.units.iter().enumerate() {
            let x = &self.occ_x[unit.idx * p..(unit.idx + 1) * p];
            let omega = self.state.omega_occ[u];
            let kappa = f64::from(self.state.z[unit.idx]) - 0.5;
            let offset = self.occ_lin[unit.idx] - linalg::dot(x, &self.state.beta);
            let r = kappa - omega * offset;
            for a in 0..p {
                if x[a] == 0.0 {
                    continue;
                }
                b[a] += x[a] * r;
                let ox = omega * x[a];
                for c in 0..=a {
                    prec[a * p + c] += ox * x[c];
                }
            }
        }
        for a in 0..p {
            for c in 0..a {
                prec[c * p + a] = prec[a * p + c];
            }
        }
        self.state.beta = gaussian_from_precision(&mut prec, &mut b, p, &mut self.rng, "occurrence")?;

        for (g, cols) in self.random_groups.iter().enumerate() {
            let ss: f64 = cols.iter().map(|&i| self.state.beta[i].powi(2)).sum();
            self.state.tau_sq[g] = inverse_gamma(
                self.stratum_prior.shape + 0.5 * cols.len() as f64,
                self.stratum_prior.scale + 0.5 * ss,
                &mut self.rng,
            );
        }
        self.refresh_occurrence();
        Ok(())
    }

    fn update_detection_block(&mut self) -> Result<()> {
        let q = self.det_design.n_columns();
        if q == 0 {
            return Ok(());
        }
        let mut prec = vec![0.0; q * q];
        let mut b = vec![self.alpha_prior_prec * self.alpha_prior_mean; q];
        for i in 0..q {
            prec[i * q + i] = self.alpha_prior_prec;
        }
        for unit in &self.units {
            if self.state.z[unit.idx] == 0 {
                continue;
            }
            for r in unit.rows.clone() {
                let x = &self.det_x[r * q..(r + 1) * q];
                let omega = self.state.omega_det[r];
                let kappa = f64::from(self.det_y[r]) - 0.5;
                for a in 0..q {
                    if x[a] == 0.0 {
                        continue;
                    }
                    b[a] += x[a] * kappa;
                    let ox = omega * x[a];
                    for c in 0..=a {
                        prec[a * q + c] += ox * x[c];
                    }
                }
            }
        }
        for a in 0..q {
            for c in 0..a {
                prec[c * q + a] = prec[a * q + c];
            }
        }
        self.state.alpha = gaussian_from_precision(&mut prec, &mut b, q, &mut self.rng, "detection")?;
        self.refresh_detection();
        Ok(())
    }

    /// Site-by-site draw of a latent surface from its exact full conditional:
    /// the NNGP prior terms involving the site (its own conditional and those
    /// of the sites that use it as a neighbor) plus the PG-Gaussian likelihood
    /// of its sampled site-seasons, weighted by the surface's covariate.
    pub fn update_gp_surface(&mut self, id: SurfaceId) {
        let nt = self.n_seasons;
        let surf = self.surface(id).clone();
        let nngp = &surf.nngp;
        let mut w = surf.w;
        for &j in nngp.sets().order() {
            let f_j = nngp.cond_var(j);
            let mut prec = 1.0 / f_j;
            let mut lin = nngp.cond_mean(j, &w) / f_j;
            for &(child, slot) in nngp.sets().children(j) {
                let b = nngp.weights(child)[slot];
                let f = nngp.cond_var(child);
                let rest = nngp.cond_mean(child, &w) - b * w[j];
                prec += b * b / f;
                lin += b / f * (w[child] - rest);
            }
            for t in 0..nt {
                let idx = j * nt + t;
                if let Some(u) = self.unit_of[idx] {
                    let c = self.surface_weight(id, idx);
                    if c == 0.0 {
                        continue;
                    }
                    let omega = self.state.omega_occ[u];
                    let kappa = f64::from(self.state.z[idx]) - 0.5;
                    let rest = self.occ_lin[idx] - c * w[j];
                    prec += omega * c * c;
                    lin += c * (kappa - omega * rest);
                }
            }
            let new = lin / prec + std_normal(&mut self.rng) / prec.sqrt();
            let delta = new - w[j];
            for &idx in &self.site_idx[j] {
                self.occ_lin[idx] += self.surface_weight(id, idx) * delta;
            }
            w[j] = new;
        }
        self.surface_mut(id).w = w;
    }

    /// Conjugate inverse-gamma draw of the spatial variance, then a
    /// random-walk Metropolis step for the decay on
    /// `logit((phi - lower) / (upper - lower))`.
    pub fn update_spatial_params(&mut self, id: SurfaceId) -> Result<()> {
        let surf = self.surface(id).clone();
        let n = surf.w.len() as f64;
        let quad = surf.nngp.quadratic_form(&surf.w);
        let sigma_sq = inverse_gamma(
            self.sigma_sq_prior.shape + 0.5 * n,
            self.sigma_sq_prior.scale + 0.5 * quad,
            &mut self.rng,
        );
        let phi = surf.params().phi;
        let current = surf.nngp.with_params(SpatialParams::new(sigma_sq, phi)?)?;

        let UniformPrior { lower, upper } = self.phi_bounds;
        let frac = ((phi - lower) / (upper - lower)).clamp(1e-300, 1.0 - 1e-16);
        let v = (frac / (1.0 - frac)).ln();
        let v_new = v + self.phi_sd * std_normal(&mut self.rng);
        let frac_new = logistic(v_new);
        let phi_new = lower + (upper - lower) * frac_new;
        let log_u: f64 = self.rng.random::<f64>().ln();
        let mut accepted = None;
        if phi_new > lower && phi_new < upper {
            if let Ok(proposal) = current.with_params(SpatialParams::new(sigma_sq, phi_new)?) {
                let log_jac = |f: f64| f.ln() + (1.0 - f).ln();
                let ratio = nngp_log_density(&surf.w, &proposal)? + log_jac(frac_new)
                    - nngp_log_density(&surf.w, &current)?
                    - log_jac(frac);
                if log_u < ratio {
                    accepted = Some(proposal);
                }
            }
        }
        self.surface_mut(id).nngp = accepted.unwrap_or(current);
        Ok(())
    }

    /// Joint Gaussian draw of the year effects, conjugate variance, and a
    /// random-walk step for the correlation (proposals outside (-1, 1) are
    /// rejected).
    pub fn update_ar1(&mut self) -> Result<()> {
        let (Some(eta), Some(params)) = (self.state.eta.clone(), self.state.ar1) else {
            return Ok(());
        };
        let nt = self.n_seasons;
        let mut prec = ar1_inverse_correlation(params.rho, nt);
        for v in prec.iter_mut() {
            *v /= params.sigma_sq;
        }
        let mut b = vec![0.0; nt];
        for (u, unit) in self.units.iter().enumerate() {
            let t = unit.idx % nt;
            let omega = self.state.omega_occ[u];
            let kappa = f64::from(self.state.z[unit.idx]) - 0.5;
            let rest = self.occ_lin[unit.idx] - eta[t];
            prec[t * nt + t] += omega;
            b[t] += kappa - omega * rest;
        }
        let new_eta = gaussian_from_precision(&mut prec, &mut b, nt, &mut self.rng, "year effect")?;
        for idx in 0..self.occ_lin.len() {
            if self.occ_available[idx] {
                let t = idx % nt;
                self.occ_lin[idx] += new_eta[t] - eta[t];
            }
        }

        let q = ar1_inverse_correlation(params.rho, nt);
        let mut quad = 0.0;
        for a in 0..nt {
            for c in 0..nt {
                quad += new_eta[a] * q[a * nt + c] * new_eta[c];
            }
        }
        let sigma_sq = inverse_gamma(
            self.ar1_var_prior.shape + 0.5 * nt as f64,
            self.ar1_var_prior.scale + 0.5 * quad,
            &mut self.rng,
        );
        let rho_new = params.rho + self.rho_sd * std_normal(&mut self.rng);
        let log_u: f64 = self.rng.random::<f64>().ln();
        let rho = if rho_new.abs() < 1.0
            && log_u
                < ar1_log_density(&new_eta, rho_new, sigma_sq)
                    - ar1_log_density(&new_eta, params.rho, sigma_sq)
        {
            rho_new
        } else {
            params.rho
        };
        self.state.eta = Some(new_eta);
        self.state.ar1 = Some(Ar1Params { rho, sigma_sq });
        Ok(())
    }

    /// Metropolis step for the AR(1) correlation alone with a caller-supplied
    /// proposal; returns whether it was accepted.
    pub fn propose_rho(&mut self, rho_new: f64) -> bool {
        let (Some(eta), Some(params)) = (self.state.eta.as_ref(), self.state.ar1) else {
            return false;
        };
        if rho_new.abs() >= 1.0 {
            return false;
        }
        let log_u: f64 = self.rng.random::<f64>().ln();
        let accept = log_u
            < ar1_log_density(eta, rho_new, params.sigma_sq)
                - ar1_log_density(eta, params.rho, params.sigma_sq);
        if accept {
            self.state.ar1 = Some(Ar1Params {
                rho: rho_new,
                ..params
            });
        }
        accept
    }

    /// One full sweep in fixed order.
    pub fn sweep(&mut self) -> Result<()> {
        self.state.iteration += 1;
        self.update_z();
        self.update_omega();
        self.update_regression_block(Block::Detection)?;
        self.update_regression_block(Block::Occurrence)?;
        for id in self.surfaces() {
            self.update_gp_surface(id);
        }
        for id in self.surfaces() {
            self.update_spatial_params(id)?;
        }
        self.update_ar1()?;
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        let it = self.state.iteration;
        let fail = |name: String| Err(Error::NonFinite { iteration: it, parameter: name });
        let occ_names = self.occ_design.names();
        for (name, v) in occ_names.iter().zip(&self.state.beta) {
            if !v.is_finite() {
                return fail(format!("beta[{name}]"));
            }
        }
        for (name, v) in self.det_design.names().iter().zip(&self.state.alpha) {
            if !v.is_finite() {
                return fail(format!("alpha[{name}]"));
            }
        }
        for id in self.surfaces() {
            let s = self.surface(id);
            let label = surface_label(&self.occ_design, id);
            if s.w.iter().any(|v| !v.is_finite()) {
                return fail(label);
            }
            let p = s.params();
            if !(p.sigma_sq.is_finite() && p.phi.is_finite()) {
                return fail(format!("spatial parameters of {label}"));
            }
        }
        if let Some(eta) = &self.state.eta {
            if eta.iter().any(|v| !v.is_finite()) {
                return fail("eta".into());
            }
        }
        if self.state.tau_sq.iter().any(|v| !v.is_finite()) {
            return fail("tau_sq".into());
        }
        Ok(())
    }

    /// z-marginalized log-likelihood of every sampled site-season.
    pub fn pointwise_loglik(&self) -> Vec<f64> {
        let mut y = Vec::new();
        self.units
            .iter()
            .map(|unit| {
                y.clear();
                y.extend_from_slice(&self.det_y[unit.rows.clone()]);
                marginal_unit_loglik_logit(self.occ_lin[unit.idx], &self.det_lin[unit.rows.clone()], &y)
            })
            .collect()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_seasons(&self) -> usize {
        self.n_seasons
    }
}

pub fn surface_label(design: &OccurrenceDesign, id: SurfaceId) -> String {
    match id {
        SurfaceId::Intercept => "w0".into(),
        SurfaceId::Svc(i) => format!("w1:{}", design.svc[i]),
    }
}
