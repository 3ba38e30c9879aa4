//! Command-line interface: `simulate`, `fit`, `compare`, `predict`,
//! `summarize` and `experiment`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{ingest_long_csv, sha256_hex, write_long_csv, Dataset, IngestSchema};
use crate::error::{Error, Result};
use crate::mcmc::{run_chains, ChainLayout, PosteriorChain};
use crate::outputs::{
    categorize_trend, effect_covariates, effect_draws, predict_surfaces, prob_positive, summarize,
    FitSummary, KrigingMode, PredictionGrid, TrendCategory,
};
use crate::sim::{generate_scenario, run_experiment, Scenario, ScenarioConfig};
use crate::spec::{validate_spec, McmcConfig, OccupancyModelSpec};

const RHAT_THRESHOLD: f64 = 1.1;
/// Neighbor count used for the simulation experiment.
const SIMULATION_NEIGHBORS: usize = 5;

#[derive(Debug, Parser)]
#[command(name = "svc-sdm", version, about = "Spatially-varying coefficient occupancy models")]
pub struct Cli {
    /// Worker threads for chains and experiment fits.
    #[arg(long, global = true, env = "SVC_SDM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate data sets for one scenario.
    Simulate(SimulateArgs),
    /// Fit an occupancy model.
    Fit(FitArgs),
    /// Rank fits of the same data by WAIC.
    Compare(CompareArgs),
    /// Predict occurrence and effect surfaces on a grid.
    Predict(PredictArgs),
    /// Categorize per-site trends or effects.
    Summarize(SummarizeArgs),
    /// Run the five-model comparison over simulated scenarios.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Long,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// linear, quadratic, stratum, interaction, missing-interaction or full.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Override the profile's number of data sets.
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    /// JSON MCMC configuration; flags below override it.
    #[arg(long)]
    pub mcmc: Option<PathBuf>,
    /// MCMC length preset (desk: 3 x 20000/10000/10, long: 3 x 100000/50000/50).
    #[arg(long, value_enum)]
    pub mcmc_profile: Option<Profile>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Long-format detection CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON model specification.
    #[arg(long)]
    pub spec: PathBuf,
    /// JSON ingest schema; by default columns follow the model specification.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Exit 0 even if a coefficient's R-hat exceeds 1.1.
    #[arg(long)]
    pub no_strict: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Fit output directories.
    #[arg(long, num_args = 2.., required = true)]
    pub fits: Vec<PathBuf>,
    /// Optional CSV destination for the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KrigingArg {
    Mean,
    Sample,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV with cell_x, cell_y and raw covariate columns.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = KrigingArg::Mean)]
    pub kriging: KrigingArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Season label for the year effect (default: last fitted season).
    #[arg(long)]
    pub season: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Categories {
    Trend,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, value_enum, default_value_t = Categories::Trend)]
    pub categories: Categories,
    /// Covariate whose local effect is categorized (default: the first in the model).
    #[arg(long)]
    pub covariate: Option<String>,
    /// Season label (default: last fitted season).
    #[arg(long)]
    pub season: Option<i64>,
    /// Output directory (default: the fit directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Scenarios to run (default: all six).
    #[arg(long, num_args = 1..)]
    pub scenarios: Vec<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation, written last and atomically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<OutputFile>,
    pub details: serde_json::Value,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

struct Run {
    command: &'static str,
    out: PathBuf,
    started: u128,
    config: Vec<u8>,
    seed: Option<u64>,
    outputs: Vec<OutputFile>,
    details: serde_json::Value,
}

impl Run {
    fn new(command: &'static str, out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            started: now_ms(),
            config: Vec::new(),
            seed: None,
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        })
    }

    fn config_bytes(&mut self, bytes: &[u8]) {
        self.config.extend_from_slice(bytes);
        self.config.push(b'\n');
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: sha256_hex(&self.config),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            outputs: self.outputs,
            details: self.details,
        };
        let path = self.out.join("manifest.json");
        let tmp = self.out.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn csv_bytes<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

impl McmcArgs {
    /// Profile defaults, then the JSON file, then explicit flags.
    fn resolve(&self, run: &mut Run, default_profile: Profile, neighbors: Option<usize>) -> Result<McmcConfig> {
        let mut cfg = match &self.mcmc {
            Some(path) => {
                let bytes = read_bytes(path)?;
                run.config_bytes(&bytes);
                serde_json::from_slice(&bytes)?
            }
            None => {
                let mut c = match self.mcmc_profile.unwrap_or(default_profile) {
                    Profile::Long => McmcConfig::long_profile(),
                    Profile::Desk => McmcConfig::default(),
                };
                if let Some(m) = neighbors {
                    c.n_neighbors = m;
                }
                c
            }
        };
        if let Some(v) = self.chains {
            cfg.n_chains = v;
        }
        if let Some(v) = self.iterations {
            cfg.n_iterations = v;
        }
        if let Some(v) = self.burn {
            cfg.n_burn = v;
        }
        if let Some(v) = self.thin {
            cfg.n_thin = v;
        }
        if let Some(v) = self.neighbors {
            cfg.n_neighbors = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        run.config_bytes(&serde_json::to_vec(&cfg)?);
        run.seed = Some(cfg.seed);
        Ok(cfg)
    }
}

fn threads(cli: &Cli) -> usize {
    cli.threads.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

/// Runs a parsed command. `Ok(false)` means it completed but a convergence
/// check failed.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Fit(a) => fit(a, threads(cli)),
        Command::Compare(a) => compare(a).map(|_| true),
        Command::Predict(a) => predict(a).map(|_| true),
        Command::Summarize(a) => summarize_cmd(a).map(|_| true),
        Command::Experiment(a) => experiment(a, threads(cli)).map(|_| true),
    }
}

fn scenario_config(name: &str, profile: Profile, seed: u64, replicates: Option<usize>) -> Result<ScenarioConfig> {
    let scenario: Scenario = name.parse()?;
    let mut cfg = match profile {
        Profile::Desk => ScenarioConfig::desk(scenario, seed),
        Profile::Long => ScenarioConfig::long(scenario, seed),
    };
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = scenario_config(&a.scenario, a.profile, a.seed, a.replicates)?;
    let mut run = Run::new("simulate", &a.out)?;
    run.seed = Some(a.seed);
    let cfg_bytes = json_bytes(&cfg)?;
    run.config_bytes(&cfg_bytes);
    run.write("scenario.json", &cfg_bytes)?;
    for r in 0..cfg.replicates {
        let (ds, truth) = generate_scenario(&cfg, r)?;
        run.write(&format!("data_{r:03}.csv"), &csv_bytes(|b| write_long_csv(&ds, b))?)?;
        let ids = ds.data.coordinates().site_ids().to_vec();
        run.write(&format!("truth_{r:03}.csv"), &csv_bytes(|b| truth.write_csv(&ids, b))?)?;
    }
    run.details = serde_json::json!({
        "scenario": cfg.scenario.name(),
        "profile": a.profile,
        "replicates": cfg.replicates,
        "grid_size": cfg.grid_size,
        "n_visits": cfg.n_visits,
        "detection_prob": cfg.detection_prob,
    });
    run.finish()
}

fn schema_from_spec(spec: &OccupancyModelSpec) -> IngestSchema {
    let strata = spec.stratum_columns();
    IngestSchema {
        occurrence_covariates: spec.occurrence_covariates(),
        detection_covariates: spec.detection_covariates(),
        strata,
        ..IngestSchema::default()
    }
}

fn fit(a: &FitArgs, threads: usize) -> Result<bool> {
    let mut run = Run::new("fit", &a.out)?;
    let spec_bytes = read_bytes(&a.spec)?;
    run.config_bytes(&spec_bytes);
    let spec: OccupancyModelSpec = serde_json::from_slice(&spec_bytes)?;
    let schema = match &a.schema {
        Some(p) => {
            let b = read_bytes(p)?;
            run.config_bytes(&b);
            serde_json::from_slice(&b)?
        }
        None => schema_from_spec(&spec),
    };
    let cfg = a.mcmc.resolve(&mut run, Profile::Desk, None)?;
    let dataset = ingest_long_csv(&a.data, &schema)?;
    let vspec = validate_spec(&spec, &dataset.data, &dataset.covariates, cfg.n_neighbors)?;
    let chains = run_chains(&dataset, &vspec, &cfg, threads)?;
    for (c, chain) in chains.iter().enumerate() {
        run.write(&format!("chain_{c}.csv"), &csv_bytes(|b| chain.write_csv(b))?)?;
        run.write(&format!("chain_{c}.json"), &json_bytes(&chain.layout)?)?;
    }
    let summary = summarize(&chains)?;
    run.write("summary.csv", &csv_bytes(|b| summary.write_csv(b))?)?;
    run.write("summary.json", &json_bytes(&summary)?)?;
    run.write("data.json", &json_bytes(&dataset)?)?;
    run.write("model.json", &json_bytes(vspec.spec())?)?;
    run.write("mcmc.json", &json_bytes(&cfg)?)?;
    let converged = summary.converged(RHAT_THRESHOLD);
    let flagged: Vec<&str> = summary
        .params
        .iter()
        .filter(|p| p.kind.is_top_level() && p.rhat > RHAT_THRESHOLD)
        .map(|p| p.name.as_str())
        .collect();
    println!(
        "{} chains x {} draws = {} pooled draws; WAIC {:.3} (elpd {:.3}, pD {:.3}); max R-hat {:.3}",
        summary.n_chains,
        summary.draws_per_chain,
        summary.pooled_draws,
        summary.waic.waic,
        summary.waic.elpd,
        summary.waic.p_waic,
        summary.max_top_level_rhat
    );
    if !flagged.is_empty() {
        eprintln!("R-hat above {RHAT_THRESHOLD}: {}", flagged.join(", "));
    }
    run.details = serde_json::json!({
        "pooled_draws": summary.pooled_draws,
        "waic": summary.waic.waic,
        "max_top_level_rhat": summary.max_top_level_rhat,
        "converged": converged,
        "data_hash": summary.data_hash,
    });
    run.finish()?;
    Ok(converged || a.no_strict)
}

/// A fit directory read back from disk.
pub struct FitDir {
    pub dataset: Dataset,
    pub spec: OccupancyModelSpec,
    pub chains: Vec<PosteriorChain>,
    pub summary: FitSummary,
}

pub fn load_fit(dir: &Path) -> Result<FitDir> {
    let read_json = |name: &str| -> Result<Vec<u8>> { read_bytes(&dir.join(name)) };
    let summary: FitSummary = serde_json::from_slice(&read_json("summary.json")?)?;
    let dataset: Dataset = serde_json::from_slice(&read_json("data.json")?)?;
    let spec: OccupancyModelSpec = serde_json::from_slice(&read_json("model.json")?)?;
    let chains = (0..summary.n_chains)
        .map(|c| {
            let layout: ChainLayout =
                serde_json::from_slice(&read_json(&format!("chain_{c}.json"))?)?;
            let path = dir.join(format!("chain_{c}.csv"));
            let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            PosteriorChain::read(std::io::BufReader::new(f), layout)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitDir {
        dataset,
        spec,
        chains,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub fit: String,
    pub waic: f64,
    pub delta_waic: f64,
    pub substantial: bool,
}

/// Sorted ascending by WAIC with the gap to the best; gaps above 2 are
/// flagged substantial.
pub fn waic_table(entries: &[(String, f64)]) -> Vec<ComparisonRow> {
    let mut rows: Vec<(String, f64)> = entries.to_vec();
    rows.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let best = rows.first().map(|r| r.1).unwrap_or(0.0);
    rows.into_iter()
        .map(|(fit, waic)| ComparisonRow {
            fit,
            waic,
            delta_waic: waic - best,
            substantial: waic - best > 2.0,
        })
        .collect()
}

fn compare(a: &CompareArgs) -> Result<()> {
    let mut entries = Vec::new();
    let mut reference: Option<(String, usize)> = None;
    for dir in &a.fits {
        let path = dir.join("summary.json");
        let s: FitSummary = serde_json::from_slice(&read_bytes(&path)?)?;
        match &reference {
            None => reference = Some((s.data_hash.clone(), s.n_units)),
            Some((h, n)) if *h != s.data_hash || *n != s.n_units => {
                return Err(Error::Argument(format!(
                    "{} was fitted to different data than {}",
                    dir.display(),
                    a.fits[0].display()
                )));
            }
            Some(_) => {}
        }
        entries.push((dir.display().to_string(), s.waic.waic));
    }
    let table = waic_table(&entries);
    let bytes = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        for r in &table {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    })?;
    match &a.out {
        Some(path) => std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn season_index(ds: &Dataset, label: Option<i64>) -> Result<usize> {
    match label {
        None => Ok(ds.data.n_seasons() - 1),
        Some(l) => ds
            .data
            .season_index(l)
            .ok_or_else(|| Error::Argument(format!("season {l} was not fitted"))),
    }
}

fn predict(a: &PredictArgs) -> Result<()> {
    let fit = load_fit(&a.fit)?;
    let mut run = Run::new("predict", &a.out)?;
    let grid_bytes = read_bytes(&a.grid)?;
    run.config_bytes(&grid_bytes);
    let grid = PredictionGrid::from_csv(grid_bytes.as_slice(), &fit.spec.stratum_columns())?;
    let mode = match a.kriging {
        KrigingArg::Mean => KrigingMode::Mean,
        KrigingArg::Sample => {
            run.seed = Some(a.seed);
            KrigingMode::Sample { seed: a.seed }
        }
    };
    let season = season_index(&fit.dataset, a.season)?;
    let surface = predict_surfaces(&fit.chains, &fit.dataset, &grid, season, mode)?;
    run.write("surface.csv", &csv_bytes(|b| surface.write_csv(b))?)?;
    run.details = serde_json::json!({ "cells": grid.cells.len(), "season_index": season });
    run.finish()
}

fn summarize_cmd(a: &SummarizeArgs) -> Result<()> {
    let fit = load_fit(&a.fit)?;
    let out = a.out.clone().unwrap_or_else(|| a.fit.clone());
    let mut run = Run::new("summarize", &out)?;
    let covariate = match &a.covariate {
        Some(c) => c.clone(),
        None => effect_covariates(&fit.spec)
            .into_iter()
            .next()
            .ok_or_else(|| Error::Argument("model has no covariate effect to categorize".into()))?,
    };
    run.config_bytes(covariate.as_bytes());
    let season = season_index(&fit.dataset, a.season)?;
    let draws = effect_draws(&fit.chains, &fit.dataset, &covariate, season)?;
    let ids = fit.dataset.data.coordinates().site_ids();
    let mut counts: BTreeMap<TrendCategory, usize> = TrendCategory::ALL.iter().map(|&c| (c, 0)).collect();
    let site_bytes = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["site_id", "p_positive", "category"])?;
        let mut col = vec![0.0; draws.len()];
        for (j, id) in ids.iter().enumerate() {
            for (c, d) in col.iter_mut().zip(&draws) {
                *c = d[j];
            }
            let cat = categorize_trend(&col)?;
            *counts.get_mut(&cat).expect("all categories") += 1;
            w.write_record([id.clone(), prob_positive(&col).to_string(), cat.label().to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    })?;
    run.write(&format!("categories_{covariate}.csv"), &site_bytes)?;
    let n = ids.len() as f64;
    let summary_bytes = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["category", "sites", "proportion"])?;
        for c in TrendCategory::ALL {
            let k = counts[&c];
            w.write_record([c.label().to_string(), k.to_string(), (k as f64 / n).to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    })?;
    run.write(&format!("category_summary_{covariate}.csv"), &summary_bytes)?;
    print!("{}", String::from_utf8_lossy(&summary_bytes));
    run.details = serde_json::json!({ "covariate": covariate, "season_index": season });
    run.finish()
}

fn experiment(a: &ExperimentArgs, threads: usize) -> Result<()> {
    let names: Vec<String> = if a.scenarios.is_empty() {
        Scenario::ALL.iter().map(|s| s.name().to_string()).collect()
    } else {
        a.scenarios.clone()
    };
    let configs = names
        .iter()
        .map(|n| scenario_config(n, a.profile, a.seed, a.replicates))
        .collect::<Result<Vec<_>>>()?;
    let mut run = Run::new("experiment", &a.out)?;
    run.config_bytes(&serde_json::to_vec(&configs)?);
    let mcmc = a.mcmc.resolve(&mut run, a.profile, Some(SIMULATION_NEIGHBORS))?;
    let exp = run_experiment(&configs, &mcmc, threads)?;
    run.write("experiment.csv", &csv_bytes(|b| exp.write_rows_csv(b))?)?;
    run.write("aggregate.csv", &csv_bytes(|b| exp.write_aggregate_csv(b))?)?;
    run.write("effect_surfaces.csv", &csv_bytes(|b| exp.write_surfaces_csv(b))?)?;
    run.details = serde_json::json!({ "fits": exp.rows.len() });
    run.finish()
}
