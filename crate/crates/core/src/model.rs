//! Deterministic occupancy model mathematics.
//!
//! `y ~ Bernoulli(z * p)`, `z ~ Bernoulli(psi)`, with logit links on both
//! `psi` and `p`. Every likelihood path works from logits in log space.

use serde::{Deserialize, Serialize};

use crate::data::CovariateSet;
use crate::error::{Error, Result};
use crate::gp::{GpSurface, SpatialParams};
use crate::spec::{DetectionTerm, OccupancyModelSpec, OccurrenceTerm, YearEffect};

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> Result<f64> {
    if p > 0.0 && p < 1.0 {
        Ok((p / (1.0 - p)).ln())
    } else {
        Err(Error::Argument(format!("logit needs p in (0, 1), got {p}")))
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(logistic(x))`.
pub fn log_logistic(x: f64) -> f64 {
    -softplus(-x)
}

/// `log(1 - logistic(x))`.
pub fn log1m_logistic(x: f64) -> f64 {
    -softplus(x)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One column of the occurrence design matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OccurrenceColumn {
    Intercept,
    Main(String),
    Square(String),
    /// `x * 1{stratum_j == s}`; an exchangeable random slope deviation.
    StratumSlope {
        covariate: String,
        labels: String,
        stratum: usize,
    },
    /// `x * modifier`.
    Product { covariate: String, modifier: String },
}

impl OccurrenceColumn {
    pub fn name(&self) -> String {
        match self {
            OccurrenceColumn::Intercept => "(Intercept)".into(),
            OccurrenceColumn::Main(c) => c.clone(),
            OccurrenceColumn::Square(c) => format!("{c}^2"),
            OccurrenceColumn::StratumSlope {
                covariate,
                labels,
                stratum,
            } => format!("{covariate}:{labels}{stratum}"),
            OccurrenceColumn::Product {
                covariate,
                modifier,
            } => format!("{covariate}:{modifier}"),
        }
    }

    pub fn value(&self, covs: &CovariateSet, j: usize, t: usize) -> Option<f64> {
        let x = |c: &str| covs.occurrence_value(c, j, t);
        match self {
            OccurrenceColumn::Intercept => Some(1.0),
            OccurrenceColumn::Main(c) => x(c),
            OccurrenceColumn::Square(c) => x(c).map(|v| v * v),
            OccurrenceColumn::StratumSlope {
                covariate,
                labels,
                stratum,
            } => {
                let lab = covs.strata(labels)?[j];
                x(covariate).map(|v| if lab == *stratum { v } else { 0.0 })
            }
            OccurrenceColumn::Product {
                covariate,
                modifier,
            } => Some(x(covariate)? * x(modifier)?),
        }
    }

    /// Partial derivative of the column with respect to `covariate`.
    pub fn derivative(&self, covariate: &str, covs: &CovariateSet, j: usize, t: usize) -> Option<f64> {
        let x = |c: &str| covs.occurrence_value(c, j, t);
        match self {
            OccurrenceColumn::Intercept => Some(0.0),
            OccurrenceColumn::Main(c) => Some(if c == covariate { 1.0 } else { 0.0 }),
            OccurrenceColumn::Square(c) => {
                if c == covariate {
                    x(c).map(|v| 2.0 * v)
                } else {
                    Some(0.0)
                }
            }
            OccurrenceColumn::StratumSlope {
                covariate: c,
                labels,
                stratum,
            } => {
                if c == covariate {
                    let lab = covs.strata(labels)?[j];
                    Some(if lab == *stratum { 1.0 } else { 0.0 })
                } else {
                    Some(0.0)
                }
            }
            OccurrenceColumn::Product {
                covariate: c,
                modifier,
            } => {
                let mut d = 0.0;
                if c == covariate {
                    d += x(modifier)?;
                }
                if modifier == covariate {
                    d += x(c)?;
                }
                Some(d)
            }
        }
    }

    /// Group label for columns sharing a random-effect variance.
    pub fn random_group(&self) -> Option<String> {
        match self {
            OccurrenceColumn::StratumSlope {
                covariate, labels, ..
            } => Some(format!("{covariate}:{labels}")),
            _ => None,
        }
    }
}

/// Occurrence design implied by a spec: fixed and stratum columns plus the
/// covariates that carry a spatially-varying coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceDesign {
    pub columns: Vec<OccurrenceColumn>,
    pub svc: Vec<String>,
    /// Random-effect groups and the column indices in each.
    pub groups: Vec<(String, Vec<usize>)>,
}

impl OccurrenceDesign {
    pub fn new(spec: &OccupancyModelSpec, covs: &CovariateSet) -> Result<Self> {
        let mut columns: Vec<OccurrenceColumn> = Vec::new();
        let push = |c: OccurrenceColumn, columns: &mut Vec<OccurrenceColumn>| {
            if !columns.contains(&c) {
                columns.push(c);
            }
        };
        let mut svc = Vec::new();
        for term in &spec.occurrence {
            match term {
                OccurrenceTerm::Intercept => push(OccurrenceColumn::Intercept, &mut columns),
                OccurrenceTerm::Linear { covariate } => {
                    push(OccurrenceColumn::Main(covariate.clone()), &mut columns)
                }
                OccurrenceTerm::Quadratic { covariate } => {
                    push(OccurrenceColumn::Main(covariate.clone()), &mut columns);
                    push(OccurrenceColumn::Square(covariate.clone()), &mut columns);
                }
                OccurrenceTerm::Stratum { covariate, labels } => {
                    push(OccurrenceColumn::Main(covariate.clone()), &mut columns);
                    let lab = covs.strata(labels).ok_or_else(|| {
                        Error::Contract(format!("stratum labels '{labels}' not found"))
                    })?;
                    let n_strata = lab.iter().copied().max().unwrap_or(0);
                    for stratum in 1..=n_strata {
                        push(
                            OccurrenceColumn::StratumSlope {
                                covariate: covariate.clone(),
                                labels: labels.clone(),
                                stratum,
                            },
                            &mut columns,
                        );
                    }
                }
                OccurrenceTerm::Interaction {
                    covariate,
                    modifier,
                } => {
                    push(OccurrenceColumn::Main(covariate.clone()), &mut columns);
                    push(
                        OccurrenceColumn::Product {
                            covariate: covariate.clone(),
                            modifier: modifier.clone(),
                        },
                        &mut columns,
                    );
                }
                OccurrenceTerm::Svc { covariate } => {
                    push(OccurrenceColumn::Main(covariate.clone()), &mut columns);
                    svc.push(covariate.clone());
                }
            }
        }
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, c) in columns.iter().enumerate() {
            if let Some(g) = c.random_group() {
                match groups.iter_mut().find(|(name, _)| *name == g) {
                    Some((_, idx)) => idx.push(i),
                    None => groups.push((g, vec![i])),
                }
            }
        }
        Ok(Self {
            columns,
            svc,
            groups,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(OccurrenceColumn::name).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name() == name)
    }

    /// Design row, `None` if any needed covariate is missing.
    pub fn row(&self, covs: &CovariateSet, j: usize, t: usize) -> Option<Vec<f64>> {
        self.columns.iter().map(|c| c.value(covs, j, t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DetectionColumn {
    Intercept,
    Main(String),
    Square(String),
    Replicate(usize),
}

impl DetectionColumn {
    pub fn name(&self) -> String {
        match self {
            DetectionColumn::Intercept => "(Intercept)".into(),
            DetectionColumn::Main(c) => c.clone(),
            DetectionColumn::Square(c) => format!("{c}^2"),
            DetectionColumn::Replicate(k) => format!("replicate{}", k + 1),
        }
    }

    pub fn value(&self, covs: &CovariateSet, j: usize, t: usize, k: usize) -> Option<f64> {
        match self {
            DetectionColumn::Intercept => Some(1.0),
            DetectionColumn::Main(c) => covs.detection_value(c, j, t, k),
            DetectionColumn::Square(c) => covs.detection_value(c, j, t, k).map(|v| v * v),
            DetectionColumn::Replicate(r) => Some(if *r == k { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDesign {
    pub columns: Vec<DetectionColumn>,
}

impl DetectionDesign {
    pub fn new(spec: &OccupancyModelSpec, n_replicates: usize) -> Self {
        let mut columns = Vec::new();
        for term in &spec.detection {
            let new: Vec<DetectionColumn> = match term {
                DetectionTerm::Intercept => vec![DetectionColumn::Intercept],
                DetectionTerm::Linear { covariate } => vec![DetectionColumn::Main(covariate.clone())],
                DetectionTerm::Quadratic { covariate } => vec![
                    DetectionColumn::Main(covariate.clone()),
                    DetectionColumn::Square(covariate.clone()),
                ],
                DetectionTerm::PerReplicateIntercept => {
                    (0..n_replicates).map(DetectionColumn::Replicate).collect()
                }
            };
            for c in new {
                if !columns.contains(&c) {
                    columns.push(c);
                }
            }
        }
        Self { columns }
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(DetectionColumn::name).collect()
    }

    pub fn row(&self, covs: &CovariateSet, j: usize, t: usize, k: usize) -> Option<Vec<f64>> {
        self.columns.iter().map(|c| c.value(covs, j, t, k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Params {
    pub rho: f64,
    pub sigma_sq: f64,
}

/// Occurrence parameters. `beta` is aligned with [`OccurrenceDesign::columns`]
/// (intercept, fixed slopes and stratum deviations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceParams {
    pub beta: Vec<f64>,
    pub w0: Option<GpSurface>,
    /// One surface per SVC covariate, in design order.
    pub w1: Vec<GpSurface>,
    pub eta: Option<Vec<f64>>,
    pub ar1: Option<Ar1Params>,
}

impl OccurrenceParams {
    /// All-zero parameters conforming to the design.
    pub fn zeros(spec: &OccupancyModelSpec, design: &OccurrenceDesign, n_sites: usize, n_seasons: usize) -> Self {
        let unit = SpatialParams {
            sigma_sq: 1.0,
            phi: 1.0,
        };
        let surface = || GpSurface {
            values: vec![0.0; n_sites],
            params: unit,
        };
        let ar1 = spec.year_effect == YearEffect::Ar1;
        Self {
            beta: vec![0.0; design.n_columns()],
            w0: spec.spatial_intercept.then(surface),
            w1: design.svc.iter().map(|_| surface()).collect(),
            eta: ar1.then(|| vec![0.0; n_seasons]),
            ar1: ar1.then_some(Ar1Params {
                rho: 0.0,
                sigma_sq: 1.0,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub alpha: Vec<f64>,
}

fn check_conformance(
    spec: &OccupancyModelSpec,
    design: &OccurrenceDesign,
    params: &OccurrenceParams,
    j: usize,
    t: usize,
) -> Result<()> {
    if params.beta.len() != design.n_columns() {
        return Err(Error::Contract(format!(
            "{} occurrence coefficients for {} design columns",
            params.beta.len(),
            design.n_columns()
        )));
    }
    if params.w1.len() != design.svc.len() {
        return Err(Error::Contract(format!(
            "{} SVC surfaces for {} SVC terms",
            params.w1.len(),
            design.svc.len()
        )));
    }
    if spec.spatial_intercept != params.w0.is_some() {
        return Err(Error::Contract("spatial intercept presence mismatch".into()));
    }
    if (spec.year_effect == YearEffect::Ar1) != params.eta.is_some() {
        return Err(Error::Contract("year effect presence mismatch".into()));
    }
    for s in params.w0.iter().chain(&params.w1) {
        if j >= s.values.len() {
            return Err(Error::Contract(format!("site {j} outside surface")));
        }
    }
    if let Some(eta) = &params.eta {
        if t >= eta.len() {
            return Err(Error::Contract(format!("season {t} outside year effects")));
        }
    }
    Ok(())
}

/// `beta_0 + eta_t + w_0(s_j) + sum of term contributions` at one site-season.
pub fn occurrence_logit(
    spec: &OccupancyModelSpec,
    params: &OccurrenceParams,
    covs: &CovariateSet,
    j: usize,
    t: usize,
) -> Result<f64> {
    let design = OccurrenceDesign::new(spec, covs)?;
    check_conformance(spec, &design, params, j, t)?;
    let row = design.row(covs, j, t).ok_or_else(|| {
        Error::Contract(format!("missing occurrence covariate at site {j} season {t}"))
    })?;
    let mut v: f64 = row.iter().zip(&params.beta).map(|(x, b)| x * b).sum();
    if let Some(w0) = &params.w0 {
        v += w0.values[j];
    }
    for (name, w1) in design.svc.iter().zip(&params.w1) {
        let x = covs.occurrence_value(name, j, t).ok_or_else(|| {
            Error::Contract(format!("missing covariate '{name}' at site {j} season {t}"))
        })?;
        v += w1.values[j] * x;
    }
    if let Some(eta) = &params.eta {
        v += eta[t];
    }
    Ok(v)
}

/// Derivative of the occurrence logit with respect to `covariate` at one
/// site-season: the local species-environment effect.
pub fn covariate_effect(
    design: &OccurrenceDesign,
    beta: &[f64],
    svc_values: &[f64],
    covariate: &str,
    covs: &CovariateSet,
    j: usize,
    t: usize,
) -> Option<f64> {
    let mut e = 0.0;
    for (c, b) in design.columns.iter().zip(beta) {
        e += c.derivative(covariate, covs, j, t)? * b;
    }
    for (name, w) in design.svc.iter().zip(svc_values) {
        if name == covariate {
            e += w;
        }
    }
    Some(e)
}

pub fn detection_logit(
    spec: &OccupancyModelSpec,
    params: &DetectionParams,
    covs: &CovariateSet,
    j: usize,
    t: usize,
    k: usize,
) -> Result<f64> {
    let (_, _, n_rep) = covs.dims();
    let design = DetectionDesign::new(spec, n_rep);
    if params.alpha.len() != design.n_columns() {
        return Err(Error::Contract(format!(
            "{} detection coefficients for {} design columns",
            params.alpha.len(),
            design.n_columns()
        )));
    }
    let row = design.row(covs, j, t, k).ok_or_else(|| {
        Error::Contract(format!(
            "missing detection covariate at site {j} season {t} replicate {k}"
        ))
    })?;
    Ok(row.iter().zip(&params.alpha).map(|(x, a)| x * a).sum())
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Argument(format!("{name} = {v} is not a probability")))
    }
}

/// `P(z = 1 | y, psi, p)` over the non-missing replicates of one site-season.
pub fn z_conditional_prob(psi: f64, p: &[f64], y: &[u8]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::Contract(format!(
            "{} detection probabilities for {} observations",
            p.len(),
            y.len()
        )));
    }
    check_probability("psi", psi)?;
    for &pk in p {
        check_probability("p", pk)?;
    }
    if y.iter().any(|&v| v == 1) {
        return Ok(1.0);
    }
    if psi == 0.0 {
        return Ok(0.0);
    }
    let log_present = psi.ln() + p.iter().map(|&pk| (-pk).ln_1p()).sum::<f64>();
    let log_absent = (-psi).ln_1p();
    Ok((log_present - log_add_exp(log_present, log_absent)).exp())
}

/// Same as [`z_conditional_prob`] with linear predictors as inputs.
pub fn z_conditional_prob_logit(psi_logit: f64, p_logits: &[f64]) -> f64 {
    let log_present = log_logistic(psi_logit) + p_logits.iter().map(|&a| log1m_logistic(a)).sum::<f64>();
    let log_absent = log1m_logistic(psi_logit);
    (log_present - log_add_exp(log_present, log_absent)).exp()
}

/// Log-likelihood of one site-season with the latent state summed out.
/// An empty observation vector contributes 0.
pub fn marginal_unit_loglik(psi: f64, p: &[f64], y: &[u8]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::Contract(format!(
            "{} detection probabilities for {} observations",
            p.len(),
            y.len()
        )));
    }
    check_probability("psi", psi)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let mut log_present = psi.ln();
    for (&pk, &yk) in p.iter().zip(y) {
        check_probability("p", pk)?;
        log_present += if yk == 1 { pk.ln() } else { (-pk).ln_1p() };
    }
    if y.iter().all(|&v| v == 0) {
        Ok(log_add_exp(log_present, (-psi).ln_1p()))
    } else {
        Ok(log_present)
    }
}

/// Same as [`marginal_unit_loglik`] with linear predictors as inputs; finite
/// for any finite logits.
pub fn marginal_unit_loglik_logit(psi_logit: f64, p_logits: &[f64], y: &[u8]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mut log_present = log_logistic(psi_logit);
    let mut any = false;
    for (&a, &yk) in p_logits.iter().zip(y) {
        if yk == 1 {
            any = true;
            log_present += log_logistic(a);
        } else {
            log_present += log1m_logistic(a);
        }
    }
    if any {
        log_present
    } else {
        log_add_exp(log_present, log1m_logistic(psi_logit))
    }
}
