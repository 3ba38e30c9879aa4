//! Convergence diagnostics, model comparison, posterior summaries and
//! predicted surfaces.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSet, Dataset};
use crate::error::{Error, Result};
use crate::gp::{KrigingPlan, SpatialParams};
use crate::mcmc::{ParamKind, PosteriorChain};
use crate::model::{covariate_effect, logistic, OccurrenceDesign};
use crate::spec::{OccupancyModelSpec, OccurrenceTerm};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n - 1` denominator.
fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let h = (s.len() as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn split_halves<'a>(chains: &[&'a [f64]]) -> Result<Vec<&'a [f64]>> {
    if chains.is_empty() {
        return Err(Error::Argument("R-hat needs at least one chain".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Argument("chains must have equal length".into()));
    }
    if n < 4 {
        return Err(Error::Argument(format!("chains of length {n} are too short (need 4)")));
    }
    let half = n / 2;
    Ok(chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect())
}

/// Split potential scale reduction factor. Each chain is cut into its first
/// and last halves; `sqrt(((N-1)/N W + B/N) / W)` over the halves. Zero
/// within-half variance gives 1 if every value is identical, else infinity.
pub fn rhat(chains: &[&[f64]]) -> Result<f64> {
    let halves = split_halves(chains)?;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| sample_var(h)).collect::<Vec<_>>());
    let b = n * sample_var(&means);
    if w == 0.0 {
        let first = halves[0][0];
        return Ok(if halves.iter().all(|h| h.iter().all(|&v| v == first)) {
            1.0
        } else {
            f64::INFINITY
        });
    }
    let v = (n - 1.0) / n * w + b / n;
    Ok((v / w).sqrt())
}

/// Effective sample size over split chains using Geyer's initial positive
/// sequence of paired autocorrelations.
pub fn ess(chains: &[&[f64]]) -> Result<f64> {
    let halves = split_halves(chains)?;
    let m = halves.len() as f64;
    let n = halves[0].len();
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| sample_var(h)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if !(var_plus > 0.0) {
        return Ok(m * n as f64);
    }
    let autocov = |lag: usize| -> f64 {
        halves
            .iter()
            .zip(&means)
            .map(|(h, mu)| {
                (0..n - lag).map(|i| (h[i] - mu) * (h[i + lag] - mu)).sum::<f64>() / n as f64
            })
            .sum::<f64>()
            / m
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;
    let mut sum = 0.0;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        sum += pair;
        t += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / (m * n as f64).log10().max(1.0));
    Ok(m * n as f64 / tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub elpd: f64,
    pub p_waic: f64,
}

/// WAIC from a `draws x units` pointwise log-likelihood matrix:
/// `elpd = sum_i [log mean_s exp(ll_si) - var_s(ll_si)]`, `waic = -2 elpd`.
pub fn waic(loglik: &[Vec<f64>]) -> Result<Waic> {
    let s = loglik.len();
    if s < 2 {
        return Err(Error::Argument(format!("WAIC needs at least 2 draws, got {s}")));
    }
    let n_units = loglik[0].len();
    if loglik.iter().any(|r| r.len() != n_units) {
        return Err(Error::Argument("ragged log-likelihood matrix".into()));
    }
    let mut elpd = 0.0;
    let mut p = 0.0;
    let mut col = vec![0.0; s];
    for i in 0..n_units {
        for (c, row) in col.iter_mut().zip(loglik) {
            *c = row[i];
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite log-likelihood at unit {i}")));
        }
        let mx = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lme = mx + (col.iter().map(|v| (v - mx).exp()).sum::<f64>() / s as f64).ln();
        let v = sample_var(&col);
        elpd += lme - v;
        p += v;
    }
    Ok(Waic {
        waic: -2.0 * elpd,
        elpd,
        p_waic: p,
    })
}

/// Area under the ROC curve as the Mann-Whitney statistic with ties counted
/// one half. `None` when only one class is present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mid-ranks over tied blocks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Some(u / (n1 as f64 * n0 as f64))
}

/// Holdout AUC averaged over posterior draws (`draws x units` scores).
pub fn mean_auc(score_draws: &[Vec<f64>], labels: &[bool]) -> Option<f64> {
    let v: Option<Vec<f64>> = score_draws.iter().map(|s| auc(s, labels)).collect();
    v.filter(|v| !v.is_empty()).map(|v| mean(&v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendCategory {
    StrongPositive,
    ModeratePositive,
    NoEffect,
    ModerateNegative,
    StrongNegative,
}

impl TrendCategory {
    pub const ALL: [TrendCategory; 5] = [
        TrendCategory::StrongPositive,
        TrendCategory::ModeratePositive,
        TrendCategory::NoEffect,
        TrendCategory::ModerateNegative,
        TrendCategory::StrongNegative,
    ];

    /// Bins of `P(trend > 0)`: `> 0.8`, `(0.6, 0.8]`, `(0.4, 0.6]`,
    /// `[0.2, 0.4]`, `< 0.2`.
    pub fn from_probability(p: f64) -> Self {
        if p > 0.8 {
            TrendCategory::StrongPositive
        } else if p > 0.6 {
            TrendCategory::ModeratePositive
        } else if p > 0.4 {
            TrendCategory::NoEffect
        } else if p >= 0.2 {
            TrendCategory::ModerateNegative
        } else {
            TrendCategory::StrongNegative
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TrendCategory::StrongPositive => "Strong Positive",
            TrendCategory::ModeratePositive => "Moderate Positive",
            TrendCategory::NoEffect => "No effect",
            TrendCategory::ModerateNegative => "Moderate Negative",
            TrendCategory::StrongNegative => "Strong Negative",
        }
    }
}

pub fn prob_positive(draws: &[f64]) -> f64 {
    draws.iter().filter(|&&v| v > 0.0).count() as f64 / draws.len() as f64
}

pub fn categorize_trend(draws: &[f64]) -> Result<TrendCategory> {
    if draws.is_empty() {
        return Err(Error::Argument("trend categorization needs at least one draw".into()));
    }
    Ok(TrendCategory::from_probability(prob_positive(draws)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub kind: ParamKind,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q2_5: f64,
    pub q97_5: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_chains: usize,
    pub draws_per_chain: usize,
    pub pooled_draws: usize,
    pub data_hash: String,
    pub n_units: usize,
    pub params: Vec<ParamSummary>,
    pub waic: Waic,
    pub max_top_level_rhat: f64,
}

impl FitSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn converged(&self, threshold: f64) -> bool {
        self.max_top_level_rhat <= threshold
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["parameter", "kind", "mean", "sd", "median", "q2.5", "q97.5", "rhat", "ess"])?;
        for p in &self.params {
            let kind = serde_json::to_value(p.kind)?;
            w.write_record([
                p.name.clone(),
                kind.as_str().unwrap_or_default().to_string(),
                p.mean.to_string(),
                p.sd.to_string(),
                p.median.to_string(),
                p.q2_5.to_string(),
                p.q97_5.to_string(),
                p.rhat.to_string(),
                p.ess.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

fn check_compatible(chains: &[PosteriorChain]) -> Result<()> {
    let first = chains
        .first()
        .ok_or_else(|| Error::Argument("no chains to summarize".into()))?;
    for c in &chains[1..] {
        let (a, b) = (&first.layout, &c.layout);
        if a.params != b.params
            || a.surfaces != b.surfaces
            || a.units != b.units
            || a.provenance.data_hash != b.provenance.data_hash
            || c.n_draws() != first.n_draws()
        {
            return Err(Error::Argument(
                "chains differ in structure, data or length".into(),
            ));
        }
    }
    Ok(())
}

/// All draws of all chains, in chain then draw order.
pub fn pooled_loglik(chains: &[PosteriorChain]) -> Vec<Vec<f64>> {
    chains.iter().flat_map(|c| c.loglik.iter().cloned()).collect()
}

/// Posterior summaries, per-parameter R-hat/ESS and WAIC of pooled chains.
pub fn summarize(chains: &[PosteriorChain]) -> Result<FitSummary> {
    check_compatible(chains)?;
    let first = &chains[0];
    let n = first.n_draws();
    let mut params = Vec::new();
    let mut max_rhat: f64 = 1.0;
    for (i, info) in first.layout.params.iter().enumerate() {
        let per_chain: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.draws.iter().map(|d| d[i]).collect())
            .collect();
        let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let refs: Vec<&[f64]> = per_chain.iter().map(Vec::as_slice).collect();
        let (r, e) = if n >= 4 {
            (rhat(&refs)?, ess(&refs)?)
        } else {
            (f64::NAN, f64::NAN)
        };
        if info.kind.is_top_level() && !r.is_nan() {
            max_rhat = max_rhat.max(r);
        }
        let mut sorted = pooled.clone();
        sorted.sort_by(f64::total_cmp);
        params.push(ParamSummary {
            name: info.name.clone(),
            kind: info.kind,
            mean: mean(&pooled),
            sd: if pooled.len() > 1 { sample_var(&pooled).sqrt() } else { 0.0 },
            median: quantile_sorted(&sorted, 0.5),
            q2_5: quantile_sorted(&sorted, 0.025),
            q97_5: quantile_sorted(&sorted, 0.975),
            rhat: r,
            ess: e,
        });
    }
    Ok(FitSummary {
        n_chains: chains.len(),
        draws_per_chain: n,
        pooled_draws: n * chains.len(),
        data_hash: first.layout.provenance.data_hash.clone(),
        n_units: first.layout.units.len(),
        params,
        waic: waic(&pooled_loglik(chains))?,
        max_top_level_rhat: max_rhat,
    })
}

/// Posterior draws of one draw's regression and surface values, in the
/// layout of the fitted spec.
struct DrawView<'a> {
    beta: Vec<f64>,
    w0: Option<&'a [f64]>,
    w1: Vec<&'a [f64]>,
    eta: Option<Vec<f64>>,
    w0_params: Option<SpatialParams>,
    w1_params: Vec<SpatialParams>,
}

struct Layout {
    beta_idx: Vec<usize>,
    w0: Option<(usize, usize, usize)>,
    w1: Vec<(usize, usize, usize)>,
    eta_idx: Option<Vec<usize>>,
}

impl Layout {
    fn new(chain: &PosteriorChain, design: &OccurrenceDesign) -> Result<Self> {
        let find = |name: String| {
            chain
                .param_index(&name)
                .ok_or_else(|| Error::Contract(format!("chain has no parameter '{name}'")))
        };
        let surf = |label: String| -> Result<(usize, usize, usize)> {
            let s = chain
                .layout
                .surfaces
                .iter()
                .position(|s| *s == label)
                .ok_or_else(|| Error::Contract(format!("chain has no surface '{label}'")))?;
            Ok((s, find(format!("sigma_sq[{label}]"))?, find(format!("phi[{label}]"))?))
        };
        let beta_idx = design
            .names()
            .into_iter()
            .map(|n| find(format!("beta[{n}]")))
            .collect::<Result<_>>()?;
        let spec = &chain.layout.provenance.spec;
        let w0 = if spec.spatial_intercept {
            Some(surf("w0".into())?)
        } else {
            None
        };
        let w1 = design
            .svc
            .iter()
            .map(|c| surf(format!("w1:{c}")))
            .collect::<Result<_>>()?;
        let eta_idx = if spec.year_effect == crate::spec::YearEffect::Ar1 {
            Some(
                chain
                    .layout
                    .season_labels
                    .iter()
                    .map(|s| find(format!("eta[{s}]")))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            beta_idx,
            w0,
            w1,
            eta_idx,
        })
    }

    fn view<'a>(&self, chain: &'a PosteriorChain, d: usize) -> Result<DrawView<'a>> {
        let row = &chain.draws[d];
        let params = |(_, s, p): (usize, usize, usize)| SpatialParams::new(row[s], row[p]);
        Ok(DrawView {
            beta: self.beta_idx.iter().map(|&i| row[i]).collect(),
            w0: self.w0.map(|(s, _, _)| chain.surface_draws[s][d].as_slice()),
            w1: self
                .w1
                .iter()
                .map(|&(s, _, _)| chain.surface_draws[s][d].as_slice())
                .collect(),
            eta: self.eta_idx.as_ref().map(|idx| idx.iter().map(|&i| row[i]).collect()),
            w0_params: self.w0.map(params).transpose()?,
            w1_params: self.w1.iter().map(|&t| params(t)).collect::<Result<_>>()?,
        })
    }
}

/// Covariates carrying a species-environment effect in a spec (modifiers of
/// interaction terms are not included).
pub fn effect_covariates(spec: &OccupancyModelSpec) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for term in &spec.occurrence {
        if let OccurrenceTerm::Intercept = term {
            continue;
        }
        if let Some(c) = term.covariate() {
            if !out.iter().any(|o| o == c) {
                out.push(c.to_string());
            }
        }
    }
    out
}

/// Per-draw local effect `d logit(psi) / d covariate` at every site for one
/// season: `[draw][site]`, draws pooled in chain order.
pub fn effect_draws(
    chains: &[PosteriorChain],
    dataset: &Dataset,
    covariate: &str,
    season: usize,
) -> Result<Vec<Vec<f64>>> {
    check_compatible(chains)?;
    let spec = &chains[0].layout.provenance.spec;
    let covs = &dataset.covariates;
    let design = OccurrenceDesign::new(spec, covs)?;
    let layout = Layout::new(&chains[0], &design)?;
    let nj = dataset.data.n_sites();
    let mut out = Vec::new();
    for chain in chains {
        for d in 0..chain.n_draws() {
            let v = layout.view(chain, d)?;
            let row = (0..nj)
                .map(|j| {
                    let svc: Vec<f64> = v.w1.iter().map(|w| w[j]).collect();
                    covariate_effect(&design, &v.beta, &svc, covariate, covs, j, season)
                        .ok_or_else(|| {
                            Error::Contract(format!(
                                "missing covariate for effect of '{covariate}' at site {j}"
                            ))
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(row);
        }
    }
    Ok(out)
}

/// How latent surfaces are carried to prediction cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrigingMode {
    /// Kriging mean per draw.
    Mean,
    /// Kriging mean plus an independent predictive normal draw per cell.
    Sample { seed: u64 },
}

/// Prediction locations with raw (unstandardized) covariate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub cells: Vec<[f64; 2]>,
    pub covariates: BTreeMap<String, Vec<f64>>,
    pub strata: BTreeMap<String, Vec<usize>>,
}

impl PredictionGrid {
    /// Reads `cell_x,cell_y,<covariates...>`; columns named in `strata` are
    /// integer stratum labels.
    pub fn from_csv<R: Read>(reader: R, strata: &[String]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let pos = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Dataset(format!("grid has no '{name}' column")))
        };
        let (ix, iy) = (pos("cell_x")?, pos("cell_y")?);
        let mut grid = PredictionGrid {
            cells: Vec::new(),
            covariates: BTreeMap::new(),
            strata: BTreeMap::new(),
        };
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|_| Error::Ingest {
                    row: row + 2,
                    message: format!("'{}' in column '{}' is not a number", &rec[i], header[i]),
                })
            };
            grid.cells.push([num(ix)?, num(iy)?]);
            for (i, h) in header.iter().enumerate() {
                if i == ix || i == iy {
                    continue;
                }
                if strata.contains(h) {
                    let v = num(i)?;
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::Ingest {
                            row: row + 2,
                            message: format!("stratum label '{}' must be a positive integer", &rec[i]),
                        });
                    }
                    grid.strata.entry(h.clone()).or_default().push(v as usize);
                } else {
                    grid.covariates.entry(h.clone()).or_default().push(num(i)?);
                }
            }
        }
        Ok(grid)
    }

    /// Standardized covariate set over the grid cells (one season, one replicate).
    fn covariate_set(&self, fitted: &CovariateSet, needed: &[String], strata: &[String]) -> Result<CovariateSet> {
        let n = self.cells.len();
        let mut covs = CovariateSet::new(n, 1, 1);
        for name in needed {
            let raw = self.covariates.get(name).ok_or_else(|| {
                Error::Dataset(format!("prediction grid is missing covariate '{name}'"))
            })?;
            if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "covariate '{name}' is missing at grid cell {i}"
                )));
            }
            let values: Vec<f64> = match fitted.transform(name) {
                Some(tr) => raw.iter().map(|&v| tr.apply(v)).collect(),
                None => raw.clone(),
            };
            covs.insert_occurrence_dense(name, &values)?;
        }
        for name in strata {
            let labels = self.strata.get(name).ok_or_else(|| {
                Error::Dataset(format!("prediction grid is missing strata '{name}'"))
            })?;
            covs.insert_strata(name, labels.clone())?;
        }
        Ok(covs)
    }
}

/// Per-draw predicted quantities at grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSurface {
    pub cells: Vec<[f64; 2]>,
    /// quantity name -> `[draw][cell]`. Quantities: `psi`, `w0`, `w1:<cov>`,
    /// `effect:<cov>`.
    pub draws: BTreeMap<String, Vec<Vec<f64>>>,
}

impl PredictionSurface {
    /// Long-format rows `(cell_x, cell_y, statistic, value)`. Every quantity
    /// gets median, mean, q2.5 and q97.5; effects also get `p_positive`.
    pub fn summary_rows(&self) -> Vec<(f64, f64, String, f64)> {
        let mut rows = Vec::new();
        for (c, cell) in self.cells.iter().enumerate() {
            for (name, draws) in &self.draws {
                let mut v: Vec<f64> = draws.iter().map(|d| d[c]).collect();
                let m = mean(&v);
                v.sort_by(f64::total_cmp);
                let mut push = |stat: &str, val: f64| {
                    rows.push((cell[0], cell[1], format!("{name}_{stat}"), val));
                };
                push("median", quantile_sorted(&v, 0.5));
                push("mean", m);
                push("q2.5", quantile_sorted(&v, 0.025));
                push("q97.5", quantile_sorted(&v, 0.975));
                if name.starts_with("effect:") {
                    push("p_positive", prob_positive(&v));
                }
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_surface_rows(writer, &self.summary_rows())
    }
}

pub fn write_surface_rows<W: Write>(writer: W, rows: &[(f64, f64, String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cell_x", "cell_y", "statistic", "value"])?;
    for (x, y, s, v) in rows {
        w.write_record([x.to_string(), y.to_string(), s.clone(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Krige every latent surface of every posterior draw to the grid, assemble
/// the occurrence logit and local effects. `season` selects the year effect
/// (ignored without one).
pub fn predict_surfaces(
    chains: &[PosteriorChain],
    dataset: &Dataset,
    grid: &PredictionGrid,
    season: usize,
    mode: KrigingMode,
) -> Result<PredictionSurface> {
    check_compatible(chains)?;
    let spec = chains[0].layout.provenance.spec.clone();
    let m = chains[0].layout.provenance.config.n_neighbors;
    let fit_design = OccurrenceDesign::new(&spec, &dataset.covariates)?;
    let layout = Layout::new(&chains[0], &fit_design)?;
    let grid_covs = grid.covariate_set(
        &dataset.covariates,
        &spec.occurrence_covariates(),
        &spec.stratum_columns(),
    )?;
    let design = OccurrenceDesign::new(&spec, &grid_covs)?;
    let n = grid.cells.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            design.row(&grid_covs, c, 0).ok_or_else(|| {
                Error::Dataset(format!("missing covariate at grid cell {c}"))
            })
        })
        .collect::<Result<_>>()?;
    let plan = if layout.w0.is_some() || !layout.w1.is_empty() {
        Some(KrigingPlan::build(
            &grid.cells,
            dataset.data.coordinates().points(),
            m.min(dataset.data.n_sites()),
        )?)
    } else {
        None
    };
    let mut rng = match mode {
        KrigingMode::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        KrigingMode::Mean => None,
    };
    let mut krige = |w: &[f64], params: SpatialParams| -> Result<Vec<f64>> {
        let pred = plan.as_ref().expect("kriging plan").predict(w, params)?;
        Ok(pred
            .into_iter()
            .map(|p| match rng.as_mut() {
                Some(r) => {
                    let z: f64 = StandardNormal.sample(r);
                    p.mean + p.var.sqrt() * z
                }
                None => p.mean,
            })
            .collect())
    };
    let effects = effect_covariates(&spec);
    let mut draws: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for chain in chains {
        for d in 0..chain.n_draws() {
            let v = layout.view(chain, d)?;
            let mut lin: Vec<f64> = rows.iter().map(|r| crate::linalg::dot(r, &v.beta)).collect();
            if let Some(eta) = &v.eta {
                let e = *eta.get(season).ok_or_else(|| {
                    Error::Argument(format!("season index {season} outside the fitted seasons"))
                })?;
                lin.iter_mut().for_each(|l| *l += e);
            }
            if let (Some(w0), Some(p)) = (v.w0, v.w0_params) {
                let g = krige(w0, p)?;
                lin.iter_mut().zip(&g).for_each(|(l, w)| *l += w);
                draws.entry("w0".into()).or_default().push(g);
            }
            let mut w1_grid = Vec::new();
            for ((name, w1), &p) in design.svc.iter().zip(&v.w1).zip(&v.w1_params) {
                let g = krige(w1, p)?;
                let x = grid_covs.occurrence(name).expect("grid covariate");
                for c in 0..n {
                    lin[c] += g[c] * x[c].expect("dense grid covariate");
                }
                draws.entry(format!("w1:{name}")).or_default().push(g.clone());
                w1_grid.push(g);
            }
            for cov in &effects {
                let e = (0..n)
                    .map(|c| {
                        let svc: Vec<f64> = w1_grid.iter().map(|g| g[c]).collect();
                        covariate_effect(&design, &v.beta, &svc, cov, &grid_covs, c, 0)
                            .ok_or_else(|| Error::Dataset(format!("missing covariate at grid cell {c}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                draws.entry(format!("effect:{cov}")).or_default().push(e);
            }
            draws
                .entry("psi".into())
                .or_default()
                .push(lin.into_iter().map(logistic).collect());
        }
    }
    Ok(PredictionSurface {
        cells: grid.cells.clone(),
        draws,
    })
}
