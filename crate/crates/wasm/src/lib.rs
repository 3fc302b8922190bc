//! Browser bindings for the static demo page. Every export takes and returns
//! JSON; the plain-Rust functions behind them are tested natively.

// `!(x > 0.0)` also rejects NaN, which `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use dosefind::design::{
    efficiency_bound, optimize_next_stage, prune_weights, round_allocation, AllocationState,
    CompoundCriterionInput, CriterionTerm, OptimizerSettings,
};
use dosefind::simulator::PRUNE_TOL;
use dosefind::{DoseResponseModel, MedSpec};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
pub struct CurveRequest {
    pub model: DoseResponseModel,
    pub delta: f64,
    pub max_dose: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    201
}

#[derive(Debug, Serialize)]
pub struct CurveResponse {
    pub doses: Vec<f64>,
    pub means: Vec<f64>,
    pub med: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct WeightedModel {
    pub model: DoseResponseModel,
    pub alpha: f64,
}

#[derive(Debug, Deserialize)]
pub struct DesignRequest {
    pub doses: Vec<f64>,
    pub models: Vec<WeightedModel>,
    pub delta: f64,
    pub sigma: f64,
    pub total_n: usize,
    /// Patients already on each dose; none by default.
    #[serde(default)]
    pub n_old: Option<Vec<usize>>,
    pub n_next: usize,
    #[serde(default)]
    pub seed: u64,
    /// Weights to certify instead of optimizing.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct DesignResponse {
    pub weights: Vec<f64>,
    pub combined: Vec<f64>,
    pub counts: Vec<usize>,
    pub certificate: Option<f64>,
    pub h: Vec<f64>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Mean curve on an even dose grid and the MED.
pub fn curve_json(request: &str) -> Result<String, String> {
    let req: CurveRequest = serde_json::from_str(request).map_err(err)?;
    let spec = MedSpec::new(req.delta, 0.0, req.max_dose).map_err(err)?;
    let n = req.points.clamp(2, 5000);
    let top = req.max_dose.min(req.model.shape.max_dose());
    let doses: Vec<f64> = (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect();
    let means = doses
        .iter()
        .map(|&d| req.model.eval_mean(d))
        .collect::<dosefind::Result<Vec<_>>>()
        .map_err(err)?;
    let out = CurveResponse {
        doses,
        means,
        med: req.model.med(&spec),
    };
    serde_json::to_string(&out).map_err(err)
}

fn setup(req: &DesignRequest) -> Result<(CompoundCriterionInput, AllocationState), String> {
    let max_dose = *req.doses.last().ok_or("empty dose grid")?;
    let spec = MedSpec::new(req.delta, 0.0, max_dose).map_err(err)?;
    let total: f64 = req.models.iter().map(|m| m.alpha).sum();
    if !(total > 0.0) {
        return Err("model weights must have a positive sum".into());
    }
    let terms = req
        .models
        .iter()
        .map(|m| CriterionTerm {
            model: m.model.clone(),
            spec,
            alpha: m.alpha / total,
        })
        .collect();
    let input = CompoundCriterionInput::new(terms, req.sigma * req.sigma, req.total_n as f64)
        .map_err(err)?;
    let alloc = match &req.n_old {
        Some(n) => AllocationState::new(n.clone(), req.n_next),
        None => AllocationState::initial(req.doses.len(), req.n_next),
    }
    .map_err(err)?;
    Ok((input, alloc))
}

/// Optimal next-cohort weights, or the certificate of given weights.
pub fn design_json(request: &str) -> Result<String, String> {
    let req: DesignRequest = serde_json::from_str(request).map_err(err)?;
    let (input, alloc) = setup(&req)?;
    let weights = match &req.weights {
        Some(w) => w.clone(),
        None => {
            let settings = OptimizerSettings {
                seed: req.seed,
                ..Default::default()
            };
            let res = optimize_next_stage(&input, &alloc, &req.doses, &settings).map_err(err)?;
            prune_weights(&res.w_next, PRUNE_TOL)
        }
    };
    dosefind::design::Design::new(req.doses.clone(), weights.clone()).map_err(err)?;
    let cert = efficiency_bound(&input, &alloc, &req.doses, &weights).map_err(err)?;
    let out = DesignResponse {
        combined: alloc.combine(&weights),
        counts: round_allocation(&weights, req.n_next).map_err(err)?,
        weights,
        certificate: cert.bound,
        h: cert.h,
    };
    serde_json::to_string(&out).map_err(err)
}

#[wasm_bindgen]
pub fn curve(request: &str) -> Result<String, JsError> {
    curve_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn optimal_design(request: &str) -> Result<String, JsError> {
    design_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn certify(request: &str) -> Result<String, JsError> {
    let req: serde_json::Value =
        serde_json::from_str(request).map_err(|e| JsError::new(&e.to_string()))?;
    if req.get("weights").is_none() {
        return Err(JsError::new("certify needs \"weights\""));
    }
    design_json(request).map_err(|e| JsError::new(&e))
}
