//! Declarative model specifications, priors and MCMC settings.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateSet, DetectionData};
use crate::error::{Error, Result};

/// Occurrence linear-predictor terms. Every covariate term carries its own
/// main effect; a main effect shared by several terms is estimated once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OccurrenceTerm {
    Intercept,
    Linear { covariate: String },
    Quadratic { covariate: String },
    Stratum { covariate: String, labels: String },
    Interaction { covariate: String, modifier: String },
    Svc { covariate: String },
}

impl OccurrenceTerm {
    pub fn kind(&self) -> &'static str {
        match self {
            OccurrenceTerm::Intercept => "intercept",
            OccurrenceTerm::Linear { .. } => "linear",
            OccurrenceTerm::Quadratic { .. } => "quadratic",
            OccurrenceTerm::Stratum { .. } => "stratum",
            OccurrenceTerm::Interaction { .. } => "interaction",
            OccurrenceTerm::Svc { .. } => "svc",
        }
    }

    pub fn covariate(&self) -> Option<&str> {
        match self {
            OccurrenceTerm::Intercept => None,
            OccurrenceTerm::Linear { covariate }
            | OccurrenceTerm::Quadratic { covariate }
            | OccurrenceTerm::Stratum { covariate, .. }
            | OccurrenceTerm::Interaction { covariate, .. }
            | OccurrenceTerm::Svc { covariate } => Some(covariate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectionTerm {
    Intercept,
    Linear { covariate: String },
    Quadratic { covariate: String },
    /// One intercept per replicate index; replaces the shared intercept.
    PerReplicateIntercept,
}

impl DetectionTerm {
    pub fn kind(&self) -> &'static str {
        match self {
            DetectionTerm::Intercept => "intercept",
            DetectionTerm::Linear { .. } => "linear",
            DetectionTerm::Quadratic { .. } => "quadratic",
            DetectionTerm::PerReplicateIntercept => "per_replicate_intercept",
        }
    }

    pub fn covariate(&self) -> Option<&str> {
        match self {
            DetectionTerm::Linear { covariate } | DetectionTerm::Quadratic { covariate } => {
                Some(covariate)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YearEffect {
    #[default]
    None,
    Ar1,
}

/// The five species-environment functional forms compared throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalForm {
    Linear,
    Quadratic,
    Stratum,
    Interaction,
    Svc,
}

impl FunctionalForm {
    pub const ALL: [FunctionalForm; 5] = [
        FunctionalForm::Linear,
        FunctionalForm::Quadratic,
        FunctionalForm::Stratum,
        FunctionalForm::Interaction,
        FunctionalForm::Svc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FunctionalForm::Linear => "linear",
            FunctionalForm::Quadratic => "quadratic",
            FunctionalForm::Stratum => "stratum",
            FunctionalForm::Interaction => "interaction",
            FunctionalForm::Svc => "svc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    /// Occurrence regression coefficients.
    pub beta: NormalPrior,
    /// Detection regression coefficients.
    pub alpha: NormalPrior,
    pub sigma_sq: InverseGammaPrior,
    /// Spatial decay support; `None` means `(3 / d_max, 3 / d_min)` from the data.
    pub phi: Option<UniformPrior>,
    /// Variance of exchangeable stratum slope deviations.
    pub stratum_var: InverseGammaPrior,
    pub ar1_var: InverseGammaPrior,
    /// Declared support of the AR(1) correlation; always (-1, 1).
    pub ar1_rho: UniformPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta: NormalPrior {
                mean: 0.0,
                var: 2.72,
            },
            alpha: NormalPrior {
                mean: 0.0,
                var: 2.72,
            },
            sigma_sq: InverseGammaPrior {
                shape: 2.0,
                scale: 1.0,
            },
            phi: None,
            stratum_var: InverseGammaPrior {
                shape: 2.0,
                scale: 1.0,
            },
            ar1_var: InverseGammaPrior {
                shape: 2.0,
                scale: 1.0,
            },
            ar1_rho: UniformPrior {
                lower: -1.0,
                upper: 1.0,
            },
        }
    }
}

impl PriorSpec {
    /// Decay support actually used for the given data.
    pub fn phi_bounds(&self, data: &DetectionData) -> Result<UniformPrior> {
        if let Some(p) = self.phi {
            return Ok(p);
        }
        match data.coordinates().distance_range() {
            Some((lo, hi)) if lo > 0.0 && hi > lo => Ok(UniformPrior {
                lower: 3.0 / hi,
                upper: 3.0 / lo,
            }),
            // One site (or all pairs equidistant): any positive support works
            // because the likelihood does not depend on the decay.
            Some((lo, _)) if lo > 0.0 => Ok(UniformPrior {
                lower: 1.5 / lo,
                upper: 6.0 / lo,
            }),
            _ => Ok(UniformPrior {
                lower: 1.0,
                upper: 10.0,
            }),
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, p) in [("beta", self.beta), ("alpha", self.alpha)] {
            if !(p.var > 0.0 && p.var.is_finite() && p.mean.is_finite()) {
                v.push(format!("prior '{name}' needs finite mean and variance > 0"));
            }
        }
        for (name, p) in [
            ("sigma_sq", self.sigma_sq),
            ("stratum_var", self.stratum_var),
            ("ar1_var", self.ar1_var),
        ] {
            if !(p.shape > 0.0 && p.scale > 0.0 && p.shape.is_finite() && p.scale.is_finite()) {
                v.push(format!("prior '{name}' needs shape > 0 and scale > 0"));
            }
        }
        if let Some(p) = self.phi {
            if !(p.lower > 0.0 && p.lower < p.upper && p.upper.is_finite()) {
                v.push("prior 'phi' needs 0 < lower < upper".into());
            }
        }
        if self.ar1_rho.lower != -1.0 || self.ar1_rho.upper != 1.0 {
            v.push("prior 'ar1_rho' support must be (-1, 1)".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyModelSpec {
    pub occurrence: Vec<OccurrenceTerm>,
    #[serde(default)]
    pub spatial_intercept: bool,
    #[serde(default)]
    pub year_effect: YearEffect,
    pub detection: Vec<DetectionTerm>,
    #[serde(default)]
    pub priors: PriorSpec,
}

impl OccupancyModelSpec {
    /// One of the five canonical single-covariate models with an intercept in
    /// both submodels. `labels` is needed by the stratum form and `modifier`
    /// by the interaction form.
    pub fn canonical(
        form: FunctionalForm,
        covariate: &str,
        labels: Option<&str>,
        modifier: Option<&str>,
    ) -> Result<Self> {
        let c = covariate.to_string();
        let term = match form {
            FunctionalForm::Linear => OccurrenceTerm::Linear { covariate: c },
            FunctionalForm::Quadratic => OccurrenceTerm::Quadratic { covariate: c },
            FunctionalForm::Stratum => OccurrenceTerm::Stratum {
                covariate: c,
                labels: labels
                    .ok_or_else(|| Error::Argument("stratum form needs a labels column".into()))?
                    .to_string(),
            },
            FunctionalForm::Interaction => OccurrenceTerm::Interaction {
                covariate: c,
                modifier: modifier
                    .ok_or_else(|| Error::Argument("interaction form needs a modifier".into()))?
                    .to_string(),
            },
            FunctionalForm::Svc => OccurrenceTerm::Svc { covariate: c },
        };
        Ok(Self {
            occurrence: vec![OccurrenceTerm::Intercept, term],
            spatial_intercept: false,
            year_effect: YearEffect::None,
            detection: vec![DetectionTerm::Intercept],
            priors: PriorSpec::default(),
        })
    }

    pub fn svc_covariates(&self) -> Vec<&str> {
        self.occurrence
            .iter()
            .filter_map(|t| match t {
                OccurrenceTerm::Svc { covariate } => Some(covariate.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn has_spatial_process(&self) -> bool {
        self.spatial_intercept || !self.svc_covariates().is_empty()
    }

    /// Occurrence covariates referenced by any term (including modifiers).
    pub fn occurrence_covariates(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        for t in &self.occurrence {
            if let Some(c) = t.covariate() {
                out.insert(c.to_string());
            }
            if let OccurrenceTerm::Interaction { modifier, .. } = t {
                out.insert(modifier.clone());
            }
        }
        out.into_iter().collect()
    }

    pub fn detection_covariates(&self) -> Vec<String> {
        self.detection
            .iter()
            .filter_map(|t| t.covariate().map(String::from))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn stratum_columns(&self) -> Vec<String> {
        self.occurrence
            .iter()
            .filter_map(|t| match t {
                OccurrenceTerm::Stratum { labels, .. } => Some(labels.clone()),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Newtype for a spec that passed [`validate_spec`] against a particular dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec(OccupancyModelSpec);

impl ValidatedSpec {
    pub fn spec(&self) -> &OccupancyModelSpec {
        &self.0
    }

    pub fn into_inner(self) -> OccupancyModelSpec {
        self.0
    }
}

impl std::ops::Deref for ValidatedSpec {
    type Target = OccupancyModelSpec;
    fn deref(&self) -> &OccupancyModelSpec {
        &self.0
    }
}

/// Checks every invariant and reports all violations at once.
pub fn validate_spec(
    spec: &OccupancyModelSpec,
    data: &DetectionData,
    covs: &CovariateSet,
    n_neighbors: usize,
) -> Result<ValidatedSpec> {
    let mut errors = spec.priors.violations();
    let n_sites = data.n_sites();
    let units = data.sampled_units();

    if covs.dims() != (data.n_sites(), data.n_seasons(), data.n_replicates()) {
        errors.push("covariate set dimensions do not match the detection data".into());
    }

    let mut seen = BTreeSet::new();
    for t in &spec.occurrence {
        let key = (t.kind(), t.covariate().map(String::from));
        if !seen.insert(key) {
            errors.push(match t.covariate() {
                Some(c) => format!("duplicate {} term for covariate '{c}'", t.kind()),
                None => format!("duplicate {} term", t.kind()),
            });
        }
    }
    let mut seen = BTreeSet::new();
    for t in &spec.detection {
        let key = (t.kind(), t.covariate().map(String::from));
        if !seen.insert(key) {
            errors.push(format!("duplicate detection {} term", t.kind()));
        }
    }
    if spec.detection.contains(&DetectionTerm::Intercept)
        && spec.detection.contains(&DetectionTerm::PerReplicateIntercept)
    {
        errors.push("detection intercept and per-replicate intercepts cannot be combined".into());
    }

    for name in spec.occurrence_covariates() {
        match covs.occurrence(&name) {
            None => errors.push(format!("occurrence covariate '{name}' not found")),
            Some(_) => {
                if let Some(&(j, t)) = units
                    .iter()
                    .find(|&&(j, t)| covs.occurrence_value(&name, j, t).is_none())
                {
                    errors.push(format!(
                        "occurrence covariate '{name}' missing at sampled site '{}' season {}",
                        data.coordinates().site_ids()[j],
                        data.seasons()[t]
                    ));
                }
            }
        }
    }
    for name in spec.detection_covariates() {
        match covs.detection(&name) {
            None => errors.push(format!("detection covariate '{name}' not found")),
            Some(_) => {
                let missing = units.iter().any(|&(j, t)| {
                    data.observations(j, t)
                        .any(|(k, _)| covs.detection_value(&name, j, t, k).is_none())
                });
                if missing {
                    errors.push(format!(
                        "detection covariate '{name}' missing at an observed survey"
                    ));
                }
            }
        }
    }
    for col in spec.stratum_columns() {
        match covs.strata(&col) {
            None => errors.push(format!("stratum labels '{col}' not found")),
            Some(labels) => {
                let n_strata = labels.iter().copied().max().unwrap_or(0);
                for s in 1..=n_strata {
                    if !labels.contains(&s) {
                        errors.push(format!("stratum {s} of '{col}' has no sites"));
                    }
                }
            }
        }
    }

    if n_neighbors == 0 && spec.has_spatial_process() {
        errors.push("neighbor count m must be >= 1".into());
    }
    if spec.has_spatial_process() && n_sites < n_neighbors + 1 {
        let what = spec
            .svc_covariates()
            .first()
            .map(|c| format!("svc term on '{c}'"))
            .unwrap_or_else(|| "spatial intercept".into());
        errors.push(format!(
            "{what} requires J >= m + 1 = {} sites, found {n_sites}",
            n_neighbors + 1
        ));
    }
    if spec.year_effect == YearEffect::Ar1 && data.n_seasons() < 2 {
        errors.push("ar1 requires T > 1".into());
    }
    if spec.has_spatial_process() {
        match spec.priors.phi_bounds(data) {
            Ok(b) if b.lower > 0.0 && b.lower < b.upper => {}
            _ => errors.push("could not determine a valid phi support".into()),
        }
    }

    if errors.is_empty() {
        Ok(ValidatedSpec(spec.clone()))
    } else {
        Err(Error::Validation(errors))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burn: usize,
    pub n_thin: usize,
    pub n_neighbors: usize,
    pub seed: u64,
    /// Random-walk sd for the decay on its logit-of-range-fraction scale.
    pub phi_proposal_sd: f64,
    /// Random-walk sd for the AR(1) correlation.
    pub rho_proposal_sd: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            n_iterations: 20_000,
            n_burn: 10_000,
            n_thin: 10,
            n_neighbors: 15,
            seed: 1,
            phi_proposal_sd: 0.5,
            rho_proposal_sd: 0.2,
        }
    }
}

impl McmcConfig {
    /// Three chains of 100 000 iterations, 50 000 burn-in, thinning 50.
    pub fn long_profile() -> Self {
        Self {
            n_chains: 3,
            n_iterations: 100_000,
            n_burn: 50_000,
            n_thin: 50,
            ..Self::default()
        }
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iterations.saturating_sub(self.n_burn)) / self.n_thin.max(1)
    }

    pub fn pooled_draws(&self) -> usize {
        self.n_chains * self.draws_per_chain()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.n_chains == 0 {
            errors.push("n_chains must be >= 1".to_string());
        }
        if self.n_thin == 0 {
            errors.push("n_thin must be >= 1".to_string());
        }
        if self.n_burn >= self.n_iterations {
            errors.push("n_burn must be < n_iterations".to_string());
        } else if self.n_thin > 0 && self.draws_per_chain() == 0 {
            errors.push("(n_iterations - n_burn) / n_thin must be >= 1".to_string());
        }
        if self.n_neighbors == 0 {
            errors.push("n_neighbors must be >= 1".to_string());
        }
        if !(self.phi_proposal_sd > 0.0 && self.rho_proposal_sd > 0.0) {
            errors.push("proposal sds must be > 0".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}
