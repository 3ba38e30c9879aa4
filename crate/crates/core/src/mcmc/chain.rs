//! Multi-chain orchestration and posterior draw storage.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mcmc::sampler::{surface_label, Sampler, SurfaceId};
use crate::spec::{McmcConfig, OccupancyModelSpec, ValidatedSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Occurrence,
    StratumDeviation,
    StratumVariance,
    Detection,
    SpatialVariance,
    SpatialDecay,
    YearEffect,
    Ar1Variance,
    Ar1Correlation,
}

impl ParamKind {
    /// Regression coefficients checked for convergence before a fit is accepted.
    pub fn is_top_level(self) -> bool {
        matches!(self, ParamKind::Occurrence | ParamKind::Detection)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    pub chain: usize,
    pub config: McmcConfig,
    pub spec: OccupancyModelSpec,
    pub data_hash: String,
}

/// Site-season whose pointwise log-likelihood is stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitLabel {
    pub site: usize,
    pub season: usize,
}

/// Structure of a chain without its draws (the JSON sidecar).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLayout {
    pub params: Vec<ParamInfo>,
    pub surfaces: Vec<String>,
    pub site_ids: Vec<String>,
    pub season_labels: Vec<i64>,
    pub units: Vec<UnitLabel>,
    pub n_draws: usize,
    pub provenance: Provenance,
}

/// Thinned post-burn-in draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub layout: ChainLayout,
    /// `[draw][param]`
    pub draws: Vec<Vec<f64>>,
    /// `[surface][draw][site]`
    pub surface_draws: Vec<Vec<Vec<f64>>>,
    /// `[draw][unit]`
    pub loglik: Vec<Vec<f64>>,
}

impl PosteriorChain {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.layout.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.layout.params.iter().position(|p| p.name == name)
    }

    pub fn param_draws(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.param_index(name)?;
        Some(self.draws.iter().map(|d| d[i]).collect())
    }

    pub fn surface(&self, name: &str) -> Option<&[Vec<f64>]> {
        let i = self.layout.surfaces.iter().position(|s| s == name)?;
        Some(&self.surface_draws[i])
    }

    fn csv_header(&self) -> Vec<String> {
        let l = &self.layout;
        let mut h: Vec<String> = l.params.iter().map(|p| p.name.clone()).collect();
        for s in &l.surfaces {
            h.extend(l.site_ids.iter().map(|id| format!("{s}[{id}]")));
        }
        h.extend(l.units.iter().map(|u| {
            format!("loglik[{}|{}]", l.site_ids[u.site], l.season_labels[u.season])
        }));
        h
    }

    /// Writes the draws as one CSV row per draw.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.csv_header())?;
        for d in 0..self.n_draws() {
            let mut row: Vec<String> = self.draws[d].iter().map(|v| v.to_string()).collect();
            for s in &self.surface_draws {
                row.extend(s[d].iter().map(|v| v.to_string()));
            }
            row.extend(self.loglik[d].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn layout_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.layout)?)
    }

    /// Rebuilds a chain from its CSV draws and JSON layout.
    pub fn read<R: Read>(csv_reader: R, layout: ChainLayout) -> Result<Self> {
        let mut r = csv::Reader::from_reader(csv_reader);
        let mut chain = PosteriorChain {
            draws: Vec::new(),
            surface_draws: vec![Vec::new(); layout.surfaces.len()],
            loglik: Vec::new(),
            layout,
        };
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != chain.csv_header() {
            return Err(Error::Dataset("chain CSV header does not match its layout".into()));
        }
        let np = chain.layout.params.len();
        let nj = chain.layout.site_ids.len();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Ingest {
                    row: i + 2,
                    message: e.to_string(),
                })?;
            chain.draws.push(vals[..np].to_vec());
            for (s, sd) in chain.surface_draws.iter_mut().enumerate() {
                let off = np + s * nj;
                sd.push(vals[off..off + nj].to_vec());
            }
            chain.loglik.push(vals[np + chain.layout.surfaces.len() * nj..].to_vec());
        }
        if chain.n_draws() != chain.layout.n_draws {
            return Err(Error::Dataset(format!(
                "chain CSV has {} draws, layout declares {}",
                chain.n_draws(),
                chain.layout.n_draws
            )));
        }
        Ok(chain)
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(csv_path, buf).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(json_path, self.layout_json()? + "\n").map_err(|e| Error::io(json_path, e))
    }

    pub fn load(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let layout: ChainLayout = serde_json::from_str(&text)?;
        let f = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Self::read(std::io::BufReader::new(f), layout)
    }
}

fn param_layout(sampler: &Sampler, seasons: &[i64]) -> Vec<ParamInfo> {
    let st = sampler.state();
    let design = sampler.occurrence_design();
    let mut out = Vec::new();
    let random: Vec<usize> = design.groups.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    for (i, name) in design.names().into_iter().enumerate() {
        let kind = if random.contains(&i) {
            ParamKind::StratumDeviation
        } else {
            ParamKind::Occurrence
        };
        out.push(ParamInfo { name: format!("beta[{name}]"), kind });
    }
    for (g, _) in &design.groups {
        out.push(ParamInfo {
            name: format!("tau_sq[{g}]"),
            kind: ParamKind::StratumVariance,
        });
    }
    for name in sampler.detection_design().names() {
        out.push(ParamInfo {
            name: format!("alpha[{name}]"),
            kind: ParamKind::Detection,
        });
    }
    for id in sampler.surfaces() {
        let label = surface_label(design, id);
        out.push(ParamInfo {
            name: format!("sigma_sq[{label}]"),
            kind: ParamKind::SpatialVariance,
        });
        out.push(ParamInfo {
            name: format!("phi[{label}]"),
            kind: ParamKind::SpatialDecay,
        });
    }
    if st.eta.is_some() {
        for s in seasons {
            out.push(ParamInfo {
                name: format!("eta[{s}]"),
                kind: ParamKind::YearEffect,
            });
        }
        out.push(ParamInfo {
            name: "sigma_sq_eta".into(),
            kind: ParamKind::Ar1Variance,
        });
        out.push(ParamInfo {
            name: "rho".into(),
            kind: ParamKind::Ar1Correlation,
        });
    }
    out
}

fn current_values(sampler: &Sampler) -> Vec<f64> {
    let st = sampler.state();
    let mut v = st.beta.clone();
    v.extend(&st.tau_sq);
    v.extend(&st.alpha);
    for id in sampler.surfaces() {
        let s = match id {
            SurfaceId::Intercept => st.w0.as_ref().expect("spatial intercept"),
            SurfaceId::Svc(i) => &st.w1[i],
        };
        v.push(s.params().sigma_sq);
        v.push(s.params().phi);
    }
    if let (Some(eta), Some(ar1)) = (&st.eta, st.ar1) {
        v.extend(eta);
        v.push(ar1.sigma_sq);
        v.push(ar1.rho);
    }
    v
}

/// Runs one chain. Chains sharing a seed but differing in index use
/// independent random streams.
pub fn run_chain(
    dataset: &Dataset,
    spec: &ValidatedSpec,
    config: &McmcConfig,
    chain: usize,
) -> Result<PosteriorChain> {
    let data_hash = dataset.content_hash()?;
    run_chain_with_hash(dataset, spec, config, chain, data_hash)
}

fn run_chain_with_hash(
    dataset: &Dataset,
    spec: &ValidatedSpec,
    config: &McmcConfig,
    chain: usize,
    data_hash: String,
) -> Result<PosteriorChain> {
    let mut sampler = Sampler::new(dataset, spec, config, chain)?;
    let seasons = dataset.data.seasons().to_vec();
    let surfaces: Vec<SurfaceId> = sampler.surfaces();
    let layout = ChainLayout {
        params: param_layout(&sampler, &seasons),
        surfaces: surfaces
            .iter()
            .map(|&id| surface_label(sampler.occurrence_design(), id))
            .collect(),
        site_ids: dataset.data.coordinates().site_ids().to_vec(),
        season_labels: seasons,
        units: sampler
            .unit_labels()
            .into_iter()
            .map(|(site, season)| UnitLabel { site, season })
            .collect(),
        n_draws: config.draws_per_chain(),
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            chain,
            config: config.clone(),
            spec: spec.spec().clone(),
            data_hash,
        },
    };
    let n = config.draws_per_chain();
    let mut draws = Vec::with_capacity(n);
    let mut surface_draws = vec![Vec::with_capacity(n); surfaces.len()];
    let mut loglik = Vec::with_capacity(n);
    for it in 1..=config.n_iterations {
        sampler.sweep()?;
        if it > config.n_burn && (it - config.n_burn) % config.n_thin == 0 && draws.len() < n {
            draws.push(current_values(&sampler));
            let st = sampler.state();
            for (k, &id) in surfaces.iter().enumerate() {
                let w = match id {
                    SurfaceId::Intercept => &st.w0.as_ref().expect("spatial intercept").w,
                    SurfaceId::Svc(i) => &st.w1[i].w,
                };
                surface_draws[k].push(w.clone());
            }
            loglik.push(sampler.pointwise_loglik());
        }
    }
    Ok(PosteriorChain {
        layout,
        draws,
        surface_draws,
        loglik,
    })
}

/// Runs `config.n_chains` chains on a pool of at most `threads` workers.
/// Results are returned in chain order regardless of scheduling.
pub fn run_chains(
    dataset: &Dataset,
    spec: &ValidatedSpec,
    config: &McmcConfig,
    threads: usize,
) -> Result<Vec<PosteriorChain>> {
    config.validate()?;
    let hash = dataset.content_hash()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        (0..config.n_chains)
            .into_par_iter()
            .map(|c| run_chain_with_hash(dataset, spec, config, c, hash.clone()))
            .collect()
    })
}
