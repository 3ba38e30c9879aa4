use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svc_sdm::data::{ingest_long_csv_reader, write_long_csv, IngestSchema};
use svc_sdm::gp::{build_nngp, krige_predict, nngp_log_density, SpatialParams};
use svc_sdm::mcmc::{run_chains, sample_polya_gamma, PosteriorChain};
use svc_sdm::outputs::{self, FitSummary};
use svc_sdm::sim::{generate_scenario, Scenario, ScenarioConfig};
use svc_sdm::spec::{validate_spec, McmcConfig, OccupancyModelSpec};

fn err(e: svc_sdm::Error) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Detection data plus covariates.
#[pyclass(module = "svc_sdm_py", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: svc_sdm::data::Dataset,
}

#[pymethods]
impl Dataset {
    /// Parse long-format CSV text. `schema` is a JSON ingest schema.
    #[staticmethod]
    #[pyo3(signature = (text, schema=None))]
    fn from_csv(text: &str, schema: Option<&str>) -> PyResult<Self> {
        let schema: IngestSchema = match schema {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => IngestSchema::default(),
        };
        let inner = ingest_long_csv_reader(text.as_bytes(), &schema).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = svc_sdm::data::Dataset::from_json(text).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_canonical_json().map_err(err)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_long_csv(&self.inner, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn content_hash(&self) -> PyResult<String> {
        self.inner.content_hash().map_err(err)
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.inner.data.n_sites()
    }

    #[getter]
    fn n_seasons(&self) -> usize {
        self.inner.data.n_seasons()
    }

    #[getter]
    fn n_replicates(&self) -> usize {
        self.inner.data.n_replicates()
    }

    fn site_ids(&self) -> Vec<String> {
        self.inner.data.coordinates().site_ids().to_vec()
    }
}

/// Posterior chains and their pooled summary.
#[pyclass(module = "svc_sdm_py")]
struct Fit {
    chains: Vec<PosteriorChain>,
    summary: FitSummary,
}

#[pymethods]
impl Fit {
    #[getter]
    fn pooled_draws(&self) -> usize {
        self.summary.pooled_draws
    }

    #[getter]
    fn waic(&self) -> (f64, f64, f64) {
        let w = self.summary.waic;
        (w.waic, w.elpd, w.p_waic)
    }

    #[getter]
    fn max_rhat(&self) -> f64 {
        self.summary.max_top_level_rhat
    }

    fn param_names(&self) -> Vec<String> {
        self.chains[0].params().iter().map(|p| p.name.clone()).collect()
    }

    /// Pooled draws of one scalar parameter.
    fn draws(&self, name: &str) -> PyResult<Vec<f64>> {
        let mut out = Vec::new();
        for c in &self.chains {
            out.extend(
                c.param_draws(name)
                    .ok_or_else(|| PyValueError::new_err(format!("no parameter '{name}'")))?,
            );
        }
        Ok(out)
    }

    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.summary).map_err(json_err)
    }
}

/// Fit a model given its JSON specification and optional JSON MCMC settings.
#[pyfunction]
#[pyo3(signature = (dataset, spec, mcmc=None, threads=1))]
fn fit(py: Python<'_>, dataset: &Dataset, spec: &str, mcmc: Option<&str>, threads: usize) -> PyResult<Fit> {
    let spec: OccupancyModelSpec = serde_json::from_str(spec).map_err(json_err)?;
    let cfg: McmcConfig = match mcmc {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => McmcConfig::default(),
    };
    let ds = dataset.inner.clone();
    py.detach(move || {
        let v = validate_spec(&spec, &ds.data, &ds.covariates, cfg.n_neighbors)?;
        let chains = run_chains(&ds, &v, &cfg, threads)?;
        let summary = outputs::summarize(&chains)?;
        Ok(Fit { chains, summary })
    })
    .map_err(err)
}

/// Simulate one data set; returns the dataset and the true effect surface.
#[pyfunction]
#[pyo3(signature = (scenario, seed=1, replicate=0))]
fn simulate(scenario: &str, seed: u64, replicate: usize) -> PyResult<(Dataset, Vec<f64>)> {
    let sc: Scenario = scenario.parse().map_err(err)?;
    let (inner, truth) = generate_scenario(&ScenarioConfig::desk(sc, seed), replicate).map_err(err)?;
    Ok((Dataset { inner }, truth.effect))
}

#[pyfunction]
fn waic(loglik: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64)> {
    let w = outputs::waic(&loglik).map_err(err)?;
    Ok((w.waic, w.elpd, w.p_waic))
}

#[pyfunction]
fn rhat(chains: Vec<Vec<f64>>) -> PyResult<f64> {
    let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
    outputs::rhat(&refs).map_err(err)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(outputs::auc(&scores, &labels))
}

#[pyfunction]
fn categorize_trend(draws: Vec<f64>) -> PyResult<&'static str> {
    Ok(outputs::categorize_trend(&draws).map_err(err)?.label())
}

#[pyfunction]
fn polya_gamma(c: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_polya_gamma(c, &mut rng)).collect()
}

#[pyfunction]
fn nngp_logpdf(points: Vec<[f64; 2]>, w: Vec<f64>, m: usize, sigma_sq: f64, phi: f64) -> PyResult<f64> {
    let params = SpatialParams::new(sigma_sq, phi).map_err(err)?;
    let s = build_nngp(&points, m, params).map_err(err)?;
    nngp_log_density(&w, &s).map_err(err)
}

/// Kriging means and variances at new points.
#[pyfunction]
fn krige(
    new_points: Vec<[f64; 2]>,
    observed: Vec<f64>,
    points: Vec<[f64; 2]>,
    m: usize,
    sigma_sq: f64,
    phi: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let params = SpatialParams::new(sigma_sq, phi).map_err(err)?;
    let p = krige_predict(&new_points, &observed, &points, m, params).map_err(err)?;
    Ok(p.into_iter().map(|k| (k.mean, k.var)).collect())
}

#[pymodule]
fn svc_sdm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(waic, m)?)?;
    m.add_function(wrap_pyfunction!(rhat, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(categorize_trend, m)?)?;
    m.add_function(wrap_pyfunction!(polya_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(nngp_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(krige, m)?)?;
    Ok(())
}
