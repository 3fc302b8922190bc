//! JSON scenario configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::DEFAULT_ALPHA;
use crate::inference::{CandidateModel, CandidateSet, Elicitation, ParamPrior};
use crate::models::{DoseResponseModel, MedSpec, Shape};
use crate::simulator::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub lower: f64,
    pub upper: f64,
    pub mode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(flatten)]
    pub shape: Shape,
    /// One entry per shape parameter.
    #[serde(default)]
    pub priors: Vec<PriorConfig>,
    /// Beta prior curvature `α + β`.
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default)]
    pub prior_prob: Option<f64>,
}

fn default_s() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Balanced,
    /// Robust optimal design at the prior guesses.
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartingDesign {
    Named(StartKind),
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub doses: Vec<f64>,
    pub total_n: usize,
    /// Response standard deviation (a guess for design, the truth for
    /// simulation).
    pub sigma: f64,
    pub delta: f64,
    /// Upper end of the MED search range; the largest dose by default.
    #[serde(default)]
    pub max_dose: Option<f64>,
    pub models: Vec<ModelConfig>,
    pub elicitation: Elicitation,
    #[serde(default = "default_start")]
    pub starting_design: StartingDesign,
    #[serde(default)]
    pub n_interims: usize,
    #[serde(default)]
    pub min_alloc_fraction: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha_level: f64,
    #[serde(default)]
    pub seed: u64,
    /// Data-generating curve for simulation.
    #[serde(default)]
    pub truth: Option<DoseResponseModel>,
}

fn default_start() -> StartingDesign {
    StartingDesign::Named(StartKind::Balanced)
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// A validated configuration with the candidate set built.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub candidates: CandidateSet,
    pub warnings: Vec<String>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<LoadedConfig> {
        let config: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.load()
    }

    pub fn from_path(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn med_spec(&self) -> Result<MedSpec> {
        let max = self
            .max_dose
            .unwrap_or_else(|| self.doses.last().copied().unwrap_or(0.0));
        MedSpec::new(self.delta, 0.0, max)
    }

    /// Validates the document and builds the candidate set.
    pub fn load(self) -> Result<LoadedConfig> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        crate::design::validate_doses(&self.doses).map_err(cfg)?;
        if self.total_n == 0 {
            return Err(Error::Config("total_n must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::Config(format!(
                "alpha_level {} not in (0, 1)",
                self.alpha_level
            )));
        }
        let spec = self.med_spec().map_err(cfg)?;
        if self.models.is_empty() {
            return Err(Error::Config(
                "at least one candidate model is required".into(),
            ));
        }
        if let StartingDesign::Weights(w) = &self.starting_design {
            crate::design::Design::new(self.doses.clone(), w.clone())
                .map_err(|e| Error::Config(format!("starting_design: {e}")))?;
        }
        if let Some(t) = &self.truth {
            t.shape.check_nonlinear(&t.nonlinear).map_err(cfg)?;
        }

        let mut warnings = Vec::new();
        let k = self.models.len();
        let raw: Vec<f64> = self
            .models
            .iter()
            .map(|m| m.prior_prob.unwrap_or(1.0 / k as f64))
            .collect();
        if raw.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::Config(
                "prior probabilities must be non-negative".into(),
            ));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config("prior probabilities sum to zero".into()));
        }
        if (total - 1.0).abs() > 1e-6 {
            warnings.push(format!(
                "prior model probabilities sum to {total}; normalized to 1"
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        let mut models = Vec::with_capacity(k);
        for (m, p) in self.models.iter().zip(&raw) {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate model name {:?}", m.name)));
            }
            let priors = m
                .priors
                .iter()
                .map(|p| ParamPrior::new(p.lower, p.upper, p.mode, m.s))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Config(format!("model {}: {e}", m.name)))?;
            let cand = CandidateModel::elicited(
                m.name.clone(),
                m.shape,
                priors,
                &self.elicitation,
                spec.max_dose,
                p / total,
            )
            .map_err(|e| Error::Config(format!("model {}: {e}", m.name)))?;
            models.push(cand);
        }
        let candidates = CandidateSet::new(models).map_err(cfg)?;
        Ok(LoadedConfig {
            config: self,
            candidates,
            warnings,
        })
    }
}

impl LoadedConfig {
    /// Scenario for simulation; `starting_design` must already be resolved
    /// to weights.
    pub fn scenario(&self, starting_design: Vec<f64>) -> Result<Scenario> {
        let truth = self
            .config
            .truth
            .clone()
            .ok_or_else(|| Error::Config("simulation needs a \"truth\" model".into()))?;
        self.build(truth, starting_design)
    }

    /// Scenario for design and interim computations, which never touch the
    /// data-generating curve. Without a configured truth the first
    /// candidate's prior guess stands in.
    pub fn planning_scenario(&self) -> Result<Scenario> {
        let truth = match &self.config.truth {
            Some(t) => t.clone(),
            None => self.candidates.models[0].prior_guess(),
        };
        let k = self.config.doses.len();
        let start = match &self.config.starting_design {
            StartingDesign::Weights(w) => {
                let t: f64 = w.iter().sum();
                w.iter().map(|v| v / t).collect()
            }
            StartingDesign::Named(_) => vec![1.0 / k as f64; k],
        };
        self.build(truth, start)
    }

    fn build(&self, truth: DoseResponseModel, starting_design: Vec<f64>) -> Result<Scenario> {
        let c = &self.config;
        let sc = Scenario {
            name: c.name.clone().unwrap_or_else(|| "custom".into()),
            doses_option: (c.doses.len() - 1).to_string(),
            truth,
            sigma: c.sigma,
            doses: c.doses.clone(),
            total_n: c.total_n,
            n_interims: c.n_interims,
            starting_design,
            candidates: self.candidates.clone(),
            med_spec: c.med_spec()?,
            min_alloc_fraction: c.min_alloc_fraction,
            alpha_level: c.alpha_level,
        };
        sc.validate()?;
        Ok(sc)
    }
}
