//! Simulated species-environment scenarios on a regular grid and the
//! five-model comparison experiment.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSet, Dataset, DetectionData, SpatialCoordinates};
use crate::error::{Error, Result};
use crate::gp::{dense_gp_simulate, SpatialParams};
use crate::mcmc::run_chain;
use crate::model::{logistic, logit};
use crate::outputs::{effect_draws, quantile, summarize};
use crate::spec::{validate_spec, FunctionalForm, McmcConfig, OccupancyModelSpec};

pub const X: &str = "x";
pub const X_STAR: &str = "x_star";
pub const STRATUM: &str = "stratum";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Linear,
    Quadratic,
    Stratum,
    Interaction,
    MissingInteraction,
    Full,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Linear,
        Scenario::Quadratic,
        Scenario::Stratum,
        Scenario::Interaction,
        Scenario::MissingInteraction,
        Scenario::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::Quadratic => "quadratic",
            Scenario::Stratum => "stratum",
            Scenario::Interaction => "interaction",
            Scenario::MissingInteraction => "missing-interaction",
            Scenario::Full => "full",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::Argument(format!(
                    "unknown scenario '{s}'; valid scenarios: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Generating coefficients. Effects are on the logit scale per unit of the
/// standardized covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCoefficients {
    pub beta0: f64,
    pub beta1: f64,
    pub quadratic: f64,
    /// One slope deviation per 3 x 3 block, row-major from the south-west.
    pub stratum_deviations: Vec<f64>,
    pub interaction: f64,
    pub missing_interaction: f64,
    pub hidden_sigma_sq: f64,
    pub hidden_phi: f64,
}

impl Default for TrueCoefficients {
    fn default() -> Self {
        Self {
            beta0: 0.0,
            beta1: 0.75,
            quadratic: -0.5,
            stratum_deviations: vec![
                0.5103, -0.8465, -0.3625, -0.1031, -0.8915, -1.0115, -0.179, 0.0297, -0.0709,
            ],
            interaction: 0.5,
            missing_interaction: 0.5,
            hidden_sigma_sq: 1.0,
            // Effective range (correlation 0.05) of half the unit-square diagonal.
            hidden_phi: 3.0 / (0.5 * std::f64::consts::SQRT_2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Sites per grid side.
    pub grid_size: usize,
    /// Simulated data sets.
    pub replicates: usize,
    pub truth: TrueCoefficients,
    /// Surveys per site.
    pub n_visits: usize,
    pub detection_prob: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Ten data sets on a 20 x 20 grid, five visits, p = 0.62.
    pub fn desk(scenario: Scenario, seed: u64) -> Self {
        Self {
            scenario,
            grid_size: 20,
            replicates: 10,
            truth: TrueCoefficients::default(),
            n_visits: 5,
            detection_prob: 0.62,
            seed,
        }
    }

    /// As `desk` with fifty data sets.
    pub fn long(scenario: Scenario, seed: u64) -> Self {
        Self {
            replicates: 50,
            ..Self::desk(scenario, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.grid_size < 3 {
            errors.push(format!("grid_size {} must be >= 3 (nine strata)", self.grid_size));
        }
        if self.replicates == 0 {
            errors.push("replicates must be >= 1".into());
        }
        if self.n_visits == 0 {
            errors.push("n_visits must be >= 1".into());
        }
        if !(self.detection_prob > 0.0 && self.detection_prob < 1.0) {
            errors.push("detection_prob must be in (0, 1)".into());
        }
        if self.truth.stratum_deviations.len() != 9 {
            errors.push("stratum_deviations needs 9 values".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

/// Per-site component surfaces of `d logit(psi) / dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectComponents {
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
    pub stratum: Vec<f64>,
    pub interaction: Vec<f64>,
    pub missing_interaction: Vec<f64>,
}

impl EffectComponents {
    /// Sum of the components present in a scenario.
    pub fn effect(&self, scenario: Scenario) -> Vec<f64> {
        let n = self.linear.len();
        (0..n)
            .map(|j| {
                let l = self.linear[j];
                match scenario {
                    Scenario::Linear => l,
                    Scenario::Quadratic => l + self.quadratic[j],
                    Scenario::Stratum => l + self.stratum[j],
                    Scenario::Interaction => l + self.interaction[j],
                    Scenario::MissingInteraction => l + self.missing_interaction[j],
                    Scenario::Full => {
                        l + self.quadratic[j]
                            + self.stratum[j]
                            + self.interaction[j]
                            + self.missing_interaction[j]
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub scenario: Scenario,
    pub replicate: usize,
    pub coords: Vec<[f64; 2]>,
    pub components: EffectComponents,
    /// True local effect `d logit(psi) / dx` per site.
    pub effect: Vec<f64>,
    pub psi: Vec<f64>,
    pub z: Vec<u8>,
    /// Unobserved surface interacting with `x`.
    pub hidden: Vec<f64>,
}

impl ScenarioTruth {
    pub fn write_csv<W: Write>(&self, site_ids: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "site_id", "easting", "northing", "effect", "psi", "z", "hidden", "c_linear",
            "c_quadratic", "c_stratum", "c_interaction", "c_missing_interaction",
        ])?;
        let c = &self.components;
        for j in 0..self.coords.len() {
            w.write_record([
                site_ids[j].clone(),
                self.coords[j][0].to_string(),
                self.coords[j][1].to_string(),
                self.effect[j].to_string(),
                self.psi[j].to_string(),
                self.z[j].to_string(),
                self.hidden[j].to_string(),
                c.linear[j].to_string(),
                c.quadratic[j].to_string(),
                c.stratum[j].to_string(),
                c.interaction[j].to_string(),
                c.missing_interaction[j].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    v.iter().map(|x| (x - m) / sd).collect()
}

/// Stratum label (1..=9) of a grid cell: coordinate thirds, row-major from
/// the south-west corner.
pub fn grid_stratum(row: usize, col: usize, n: usize) -> usize {
    1 + 3 * (3 * row / n) + 3 * col / n
}

/// Simulates one data set. Covariates, the hidden surface and the uniform
/// draws behind `z` and `y` depend only on `(seed, replicate)`, so scenarios
/// sharing a seed see common random numbers.
pub fn generate_scenario(config: &ScenarioConfig, replicate: usize) -> Result<(Dataset, ScenarioTruth)> {
    config.validate()?;
    let n = config.grid_size;
    let nj = n * n;
    let tr = &config.truth;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate as u64);

    let step = 1.0 / (n as f64 - 1.0);
    let coords: Vec<[f64; 2]> = (0..nj)
        .map(|j| [(j % n) as f64 * step, (j / n) as f64 * step])
        .collect();
    let northing: Vec<f64> = coords.iter().map(|c| c[1]).collect();
    let easting: Vec<f64> = coords.iter().map(|c| c[0]).collect();
    let x: Vec<f64> = standardize(&northing)
        .into_iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + 0.25 * e
        })
        .collect();
    let x_star = standardize(&easting);
    let strata: Vec<usize> = (0..nj).map(|j| grid_stratum(j / n, j % n, n)).collect();
    let hidden = dense_gp_simulate(
        &coords,
        SpatialParams::new(tr.hidden_sigma_sq, tr.hidden_phi)?,
        &mut rng,
    )?
    .values;

    let components = EffectComponents {
        linear: vec![tr.beta1; nj],
        quadratic: x.iter().map(|v| 2.0 * tr.quadratic * v).collect(),
        stratum: strata.iter().map(|&s| tr.stratum_deviations[s - 1]).collect(),
        interaction: x_star.iter().map(|v| tr.interaction * v).collect(),
        missing_interaction: hidden.iter().map(|h| tr.missing_interaction * h).collect(),
    };
    let sc = config.scenario;
    let has = |part: Scenario| sc == part || sc == Scenario::Full;
    let psi: Vec<f64> = (0..nj)
        .map(|j| {
            let xj = x[j];
            let mut l = tr.beta0 + tr.beta1 * xj;
            if has(Scenario::Quadratic) {
                l += tr.quadratic * xj * xj;
            }
            if has(Scenario::Stratum) {
                l += components.stratum[j] * xj;
            }
            if has(Scenario::Interaction) {
                l += tr.interaction * x_star[j] * xj;
            }
            if has(Scenario::MissingInteraction) {
                l += tr.missing_interaction * hidden[j] * xj;
            }
            logistic(l)
        })
        .collect();
    let z: Vec<u8> = psi
        .iter()
        .map(|&p| u8::from(rng.random::<f64>() < p))
        .collect();
    let k = config.n_visits;
    let mut y = Vec::with_capacity(nj * k);
    for &zj in &z {
        for _ in 0..k {
            let u: f64 = rng.random();
            y.push(Some(u8::from(zj == 1 && u < config.detection_prob)));
        }
    }

    let coordinates = SpatialCoordinates::from_points(coords.clone())?;
    let data = DetectionData::new(coordinates, vec![1], k, y)?;
    let mut covariates = CovariateSet::for_data(&data);
    covariates.insert_occurrence_dense(X, &x)?;
    covariates.insert_occurrence_dense(X_STAR, &x_star)?;
    covariates.insert_strata(STRATUM, strata)?;
    let effect = components.effect(sc);
    Ok((
        Dataset { data, covariates },
        ScenarioTruth {
            scenario: sc,
            replicate,
            coords,
            components,
            effect,
            psi,
            z,
            hidden,
        },
    ))
}

/// The model fitted for each functional form: intercept plus the form's term
/// on `x`, constant detection.
pub fn model_spec(form: FunctionalForm) -> OccupancyModelSpec {
    OccupancyModelSpec::canonical(form, X, Some(STRATUM), Some(X_STAR))
        .expect("labels and modifier supplied")
}

/// Returns `logit(p)` for the configured detection probability.
pub fn detection_logit(config: &ScenarioConfig) -> Result<f64> {
    logit(config.detection_prob)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scenario: Scenario,
    pub replicate: usize,
    pub model: FunctionalForm,
    pub waic: f64,
    pub elpd: f64,
    pub p_waic: f64,
    /// RMSE of the posterior-median effect surface against the truth.
    pub effect_rmse: f64,
    /// Share of sites whose 95% effect interval covers the truth.
    pub effect_coverage: f64,
    pub beta1_median: f64,
    pub beta1_q2_5: f64,
    pub beta1_q97_5: f64,
    pub beta1_covered: bool,
    /// Spatial sd of the posterior-median SVC surface (SVC model only).
    pub w1_median_sd: Option<f64>,
    pub max_rhat: f64,
    /// Largest top-level R-hat exceeds 1.1.
    pub flagged: bool,
}

/// Posterior effect surface of one fit at the data sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSurface {
    pub scenario: Scenario,
    pub replicate: usize,
    pub model: FunctionalForm,
    pub median: Vec<f64>,
    pub q2_5: Vec<f64>,
    pub q97_5: Vec<f64>,
    pub p_positive: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAggregate {
    pub scenario: Scenario,
    pub model: FunctionalForm,
    pub mean_waic: f64,
    /// Mean WAIC rank among the five models (1 = best).
    pub mean_rank: f64,
    pub mean_effect_rmse: f64,
    pub beta1_covered: usize,
    pub flagged: usize,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub rows: Vec<ExperimentRow>,
    pub surfaces: Vec<EffectSurface>,
    pub truths: Vec<ScenarioTruth>,
}

fn fit_one(
    dataset: &Dataset,
    truth: &ScenarioTruth,
    form: FunctionalForm,
    mcmc: &McmcConfig,
    beta1: f64,
) -> Result<(ExperimentRow, EffectSurface)> {
    let spec = validate_spec(&model_spec(form), &dataset.data, &dataset.covariates, mcmc.n_neighbors)?;
    let chains = (0..mcmc.n_chains)
        .map(|c| run_chain(dataset, &spec, mcmc, c))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&chains)?;
    let draws = effect_draws(&chains, dataset, X, 0)?;
    let nj = truth.effect.len();
    let mut median = Vec::with_capacity(nj);
    let mut q2_5 = Vec::with_capacity(nj);
    let mut q97_5 = Vec::with_capacity(nj);
    let mut p_positive = Vec::with_capacity(nj);
    let mut col = vec![0.0; draws.len()];
    for j in 0..nj {
        for (c, d) in col.iter_mut().zip(&draws) {
            *c = d[j];
        }
        median.push(quantile(&col, 0.5));
        q2_5.push(quantile(&col, 0.025));
        q97_5.push(quantile(&col, 0.975));
        p_positive.push(crate::outputs::prob_positive(&col));
    }
    let rmse = (median
        .iter()
        .zip(&truth.effect)
        .map(|(m, t)| (m - t).powi(2))
        .sum::<f64>()
        / nj as f64)
        .sqrt();
    let coverage = (0..nj)
        .filter(|&j| q2_5[j] <= truth.effect[j] && truth.effect[j] <= q97_5[j])
        .count() as f64
        / nj as f64;
    let b1 = summary
        .param(&format!("beta[{X}]"))
        .ok_or_else(|| Error::Contract("fitted model has no main effect on x".into()))?;
    let w1_median_sd = chains[0].surface(&format!("w1:{X}")).map(|_| {
        let meds: Vec<f64> = (0..nj)
            .map(|j| {
                let v: Vec<f64> = chains
                    .iter()
                    .flat_map(|c| c.surface(&format!("w1:{X}")).expect("svc surface").iter().map(move |d| d[j]))
                    .collect();
                quantile(&v, 0.5)
            })
            .collect();
        let m = meds.iter().sum::<f64>() / nj as f64;
        (meds.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nj as f64 - 1.0)).sqrt()
    });
    let row = ExperimentRow {
        scenario: truth.scenario,
        replicate: truth.replicate,
        model: form,
        waic: summary.waic.waic,
        elpd: summary.waic.elpd,
        p_waic: summary.waic.p_waic,
        effect_rmse: rmse,
        effect_coverage: coverage,
        beta1_median: b1.median,
        beta1_q2_5: b1.q2_5,
        beta1_q97_5: b1.q97_5,
        beta1_covered: b1.q2_5 <= beta1 && beta1 <= b1.q97_5,
        w1_median_sd,
        max_rhat: summary.max_top_level_rhat,
        flagged: !summary.converged(1.1),
    };
    let surface = EffectSurface {
        scenario: truth.scenario,
        replicate: truth.replicate,
        model: form,
        median,
        q2_5,
        q97_5,
        p_positive,
    };
    Ok((row, surface))
}

/// Fits the five models to every replicate of every scenario on a pool of at
/// most `threads` workers. Each fit's chains run sequentially inside its job;
/// results are ordered by (scenario, replicate, model).
pub fn run_experiment(configs: &[ScenarioConfig], mcmc: &McmcConfig, threads: usize) -> Result<Experiment> {
    mcmc.validate()?;
    let mut data = Vec::new();
    for cfg in configs {
        for r in 0..cfg.replicates {
            let (ds, truth) = generate_scenario(cfg, r)?;
            data.push((ds, truth, cfg.truth.beta1));
        }
    }
    let jobs: Vec<(usize, FunctionalForm)> = (0..data.len())
        .flat_map(|i| FunctionalForm::ALL.into_iter().map(move |f| (i, f)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("cannot build worker pool: {e}")))?;
    let results: Vec<(ExperimentRow, EffectSurface)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, form)| {
                let (ds, truth, b1) = &data[i];
                fit_one(ds, truth, form, mcmc, *b1)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (rows, surfaces) = results.into_iter().unzip();
    Ok(Experiment {
        rows,
        surfaces,
        truths: data.into_iter().map(|(_, t, _)| t).collect(),
    })
}

impl Experiment {
    /// Per (scenario, model) means, WAIC ranks and counts.
    pub fn aggregate(&self) -> Vec<ScenarioAggregate> {
        let mut ranks: BTreeMap<(Scenario, usize), Vec<&ExperimentRow>> = BTreeMap::new();
        for r in &self.rows {
            ranks.entry((r.scenario, r.replicate)).or_default().push(r);
        }
        let mut acc: BTreeMap<(Scenario, FunctionalForm), ScenarioAggregate> = BTreeMap::new();
        for group in ranks.values() {
            for r in group {
                let rank = 1 + group.iter().filter(|o| o.waic < r.waic).count();
                let a = acc.entry((r.scenario, r.model)).or_insert(ScenarioAggregate {
                    scenario: r.scenario,
                    model: r.model,
                    mean_waic: 0.0,
                    mean_rank: 0.0,
                    mean_effect_rmse: 0.0,
                    beta1_covered: 0,
                    flagged: 0,
                    replicates: 0,
                });
                a.mean_waic += r.waic;
                a.mean_rank += rank as f64;
                a.mean_effect_rmse += r.effect_rmse;
                a.beta1_covered += usize::from(r.beta1_covered);
                a.flagged += usize::from(r.flagged);
                a.replicates += 1;
            }
        }
        acc.into_values()
            .map(|mut a| {
                let n = a.replicates as f64;
                a.mean_waic /= n;
                a.mean_rank /= n;
                a.mean_effect_rmse /= n;
                a
            })
            .collect()
    }

    pub fn write_rows_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn write_aggregate_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for a in self.aggregate() {
            w.serialize(a)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    /// Long effect-surface table with the truth alongside each fit.
    pub fn write_surfaces_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["scenario", "replicate", "model", "cell_x", "cell_y", "statistic", "value"])?;
        for s in &self.surfaces {
            let truth = self
                .truths
                .iter()
                .find(|t| t.scenario == s.scenario && t.replicate == s.replicate)
                .expect("truth for every fitted data set");
            for (j, c) in truth.coords.iter().enumerate() {
                for (stat, v) in [
                    ("truth", truth.effect[j]),
                    ("effect_median", s.median[j]),
                    ("effect_q2.5", s.q2_5[j]),
                    ("effect_q97.5", s.q97_5[j]),
                    ("effect_p_positive", s.p_positive[j]),
                ] {
                    w.write_record([
                        s.scenario.name().to_string(),
                        s.replicate.to_string(),
                        s.model.name().to_string(),
                        c[0].to_string(),
                        c[1].to_string(),
                        stat.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}
