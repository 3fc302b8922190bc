//! JSON reports and their plain-text renderings.

use std::io::{self, Write};

use dosefind::simulator::StudySummary;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub prior_prob: f64,
    pub posterior_prob: f64,
    /// `(θ₀, θ₁, θ⁰…)` at the shrinkage estimate.
    pub theta: Vec<f64>,
    pub med: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub schema_version: u32,
    pub command: String,
    pub doses: Vec<f64>,
    /// `balanced`, `weights` or `optimal`.
    pub source: String,
    pub weights: Vec<f64>,
    pub cohort_size: usize,
    pub counts: Vec<usize>,
    pub certificate: Option<f64>,
    pub h: Vec<f64>,
    pub models: Vec<ModelSummary>,
    pub dropped: Vec<String>,
    pub balanced_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterimReport {
    pub schema_version: u32,
    pub command: String,
    pub doses: Vec<f64>,
    /// Patients observed per dose so far.
    pub observed: Vec<usize>,
    pub models: Vec<ModelSummary>,
    pub dropped: Vec<String>,
    pub weights: Vec<f64>,
    pub cohort_size: usize,
    pub counts: Vec<usize>,
    pub certificate: Option<f64>,
    pub h: Vec<f64>,
    pub closed_doses: Vec<f64>,
    pub balanced_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub schema_version: u32,
    pub command: String,
    pub doses: Vec<f64>,
    pub weights: Vec<f64>,
    /// `1 / max_d h(d, w)`, absent when an information matrix is singular.
    pub certificate: Option<f64>,
    pub h: Vec<f64>,
    pub dropped: Vec<String>,
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.prec$}"))
}

fn print_models(out: &mut dyn Write, models: &[ModelSummary]) -> io::Result<()> {
    writeln!(
        out,
        "{:<12} {:>7} {:>9} {:>8}  estimate",
        "model", "prior", "posterior", "MED"
    )?;
    for m in models {
        let theta: Vec<String> = m.theta.iter().map(|t| format!("{t:.3}")).collect();
        writeln!(
            out,
            "{:<12} {:>7.4} {:>9.4} {:>8}  ({})",
            m.name,
            m.prior_prob,
            m.posterior_prob,
            opt(m.med, 2),
            theta.join(", ")
        )?;
    }
    Ok(())
}

fn print_allocation(
    out: &mut dyn Write,
    doses: &[f64],
    weights: &[f64],
    counts: &[usize],
    h: &[f64],
) -> io::Result<()> {
    writeln!(
        out,
        "{:>8} {:>8} {:>6} {:>8}",
        "dose", "weight", "n", "h(d,w)"
    )?;
    for i in 0..doses.len() {
        let hv = h.get(i).map_or("-".into(), |v| format!("{v:.4}"));
        writeln!(
            out,
            "{:>8} {:>8.4} {:>6} {:>8}",
            doses[i], weights[i], counts[i], hv
        )?;
    }
    Ok(())
}

pub fn print_design(out: &mut dyn Write, r: &DesignReport) -> io::Result<()> {
    writeln!(
        out,
        "first-stage design ({}), cohort of {}",
        r.source, r.cohort_size
    )?;
    print_allocation(out, &r.doses, &r.weights, &r.counts, &r.h)?;
    writeln!(out, "efficiency lower bound: {}", opt(r.certificate, 4))?;
    if r.balanced_fallback {
        writeln!(out, "note: optimization failed, balanced fallback used")?;
    }
    writeln!(out)?;
    print_models(out, &r.models)
}

pub fn print_interim(out: &mut dyn Write, r: &InterimReport) -> io::Result<()> {
    let n: usize = r.observed.iter().sum();
    writeln!(out, "interim analysis after {n} patients")?;
    print_models(out, &r.models)?;
    if !r.dropped.is_empty() {
        writeln!(
            out,
            "left out of the criterion (no MED): {}",
            r.dropped.join(", ")
        )?;
    }
    writeln!(out)?;
    writeln!(out, "next cohort of {}", r.cohort_size)?;
    print_allocation(out, &r.doses, &r.weights, &r.counts, &r.h)?;
    writeln!(out, "efficiency lower bound: {}", opt(r.certificate, 4))?;
    if !r.closed_doses.is_empty() {
        writeln!(out, "closed doses: {:?}", r.closed_doses)?;
    }
    if r.balanced_fallback {
        writeln!(
            out,
            "note: no usable model or optimization failed, balanced fallback used"
        )?;
    }
    Ok(())
}

pub fn print_certify(out: &mut dyn Write, r: &CertifyReport) -> io::Result<()> {
    writeln!(out, "{:>8} {:>8} {:>8}", "dose", "weight", "h(d,w)")?;
    for i in 0..r.doses.len() {
        let hv = r.h.get(i).map_or("-".into(), |v| format!("{v:.4}"));
        writeln!(out, "{:>8} {:>8.4} {:>8}", r.doses[i], r.weights[i], hv)?;
    }
    match r.certificate {
        Some(b) => writeln!(out, "efficiency lower bound: {b:.6}"),
        None => writeln!(
            out,
            "efficiency lower bound: unavailable (singular information matrix)"
        ),
    }
}

pub fn print_study(out: &mut dyn Write, s: &StudySummary) -> io::Result<()> {
    writeln!(
        out,
        "{:<12} {:>5} {:>9} {:>6} {:>8} {:>9}",
        "scenario", "grid", "interims", "reps", "MAE", "est.rate"
    )?;
    for r in &s.rows {
        writeln!(
            out,
            "{:<12} {:>5} {:>9} {:>6} {:>8} {:>9.3}",
            r.scenario,
            r.doses_option,
            r.n_interims,
            r.n_reps,
            opt(r.mae, 3),
            r.estimation_rate
        )?;
    }
    Ok(())
}
