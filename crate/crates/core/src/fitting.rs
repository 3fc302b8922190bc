//! Frequentist final analysis.
//!
//! Least-squares fits profile out `(θ₀, θ₁)`: for fixed shape parameters
//! the model is linear, so the residual sum of squares is a closed-form
//! function of `θ⁰` alone. That function is scanned on the lattice used for
//! posterior quadrature and the best point is polished by a bounded simplex
//! search. The MED is read off the lowest-AIC fit among models whose
//! contrast test is significant.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::inference::{glp_grid, CandidateSet, Dataset, SufficientStats};
use crate::models::{DoseResponseModel, MedSpec, ParameterBounds, Shape};
use crate::optim::{minimize_in_box, NelderMead};

/// One-sided familywise level of the contrast test.
pub const DEFAULT_ALPHA: f64 = 0.025;

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub grid_1d: usize,
    pub grid_2d: usize,
    pub max_evals: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            grid_1d: 100,
            grid_2d: 1597,
            max_evals: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: DoseResponseModel,
    pub rss: f64,
    /// `RSS / (N − p)`.
    pub sigma2_hat: f64,
    pub aic: f64,
    pub converged: bool,
    pub at_bound: Vec<bool>,
    /// `f⁰` was (numerically) constant over the observed doses at the
    /// optimum, so `θ₁` is not identified and was set to zero.
    pub degenerate: bool,
}

impl FitResult {
    pub fn theta_hat(&self) -> Vec<f64> {
        self.model.theta()
    }
}

struct Profile {
    rss: f64,
    theta0: f64,
    theta1: f64,
    degenerate: bool,
}

/// Weighted least squares of dose means on `(1, f⁰(d))` plus the pooled
/// within-dose sum of squares.
fn profile(stats: &SufficientStats, shape: Shape, nl: &[f64]) -> Profile {
    let mut n = 0.0;
    let mut sf = 0.0;
    let mut sy = 0.0;
    for (i, &d) in stats.doses.iter().enumerate() {
        let w = stats.counts[i] as f64;
        if w == 0.0 {
            continue;
        }
        n += w;
        sf += w * shape.f0(nl, d);
        sy += w * stats.means[i];
    }
    let (fbar, ybar) = (sf / n, sy / n);
    let mut sff = 0.0;
    let mut sfy = 0.0;
    let mut f_scale = 0.0_f64;
    for (i, &d) in stats.doses.iter().enumerate() {
        let w = stats.counts[i] as f64;
        if w == 0.0 {
            continue;
        }
        let f = shape.f0(nl, d);
        f_scale = f_scale.max(f.abs());
        let df = f - fbar;
        sff += w * df * df;
        sfy += w * df * (stats.means[i] - ybar);
    }
    let degenerate = !(sff > 1e-24 * n * f_scale.max(1e-300).powi(2));
    let theta1 = if degenerate { 0.0 } else { sfy / sff };
    let theta0 = ybar - theta1 * fbar;
    let mut rss = stats.ss_within;
    for (i, &d) in stats.doses.iter().enumerate() {
        let w = stats.counts[i] as f64;
        if w == 0.0 {
            continue;
        }
        let e = stats.means[i] - theta0 - theta1 * shape.f0(nl, d);
        rss += w * e * e;
    }
    Profile {
        rss,
        theta0,
        theta1,
        degenerate,
    }
}

/// Residual sum of squares minimized over `(θ₀, θ₁)` at fixed `θ⁰`.
pub fn profiled_rss(data: &Dataset, shape: Shape, nl: &[f64]) -> Result<f64> {
    shape.check_nonlinear(nl)?;
    if data.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    Ok(profile(&data.stats(), shape, nl).rss)
}

/// Bounded least-squares fit of one shape. `bounds` is ignored for the
/// linear model.
pub fn fit_model(
    data: &Dataset,
    shape: Shape,
    bounds: &ParameterBounds,
    settings: &FitSettings,
) -> Result<FitResult> {
    let stats = data.stats();
    fit_stats(&stats, shape, bounds, settings)
}

fn fit_stats(
    stats: &SufficientStats,
    shape: Shape,
    bounds: &ParameterBounds,
    settings: &FitSettings,
) -> Result<FitResult> {
    let dim = shape.n_nonlinear();
    let p = shape.n_params();
    let n = stats.n();
    let observed = stats.counts.iter().filter(|&&c| c > 0).count();
    if n < p + 1 || observed < p {
        return Err(Error::Data(format!(
            "{} needs at least {} observations on {} distinct doses, have {n} on {observed}",
            shape.name(),
            p + 1,
            p
        )));
    }
    if dim > 0 && bounds.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "{} needs {dim} bounds, got {}",
            shape.name(),
            bounds.len()
        )));
    }

    let (nl, converged) = if dim == 0 {
        (Vec::new(), true)
    } else {
        let grid = glp_grid(
            if dim == 1 {
                settings.grid_1d
            } else {
                settings.grid_2d
            },
            dim,
        )?;
        let mut best = (f64::INFINITY, 0usize);
        for (i, u) in grid.iter().enumerate() {
            let r = profile(stats, shape, &bounds.from_unit(u)).rss;
            if r < best.0 {
                best = (r, i);
            }
        }
        if !best.0.is_finite() {
            return Err(Error::Numerical(format!(
                "{} profile RSS is not finite anywhere on the lattice",
                shape.name()
            )));
        }
        let total_ss = profile(stats, Shape::Linear, &[]).rss.max(best.0);
        let nm = NelderMead {
            max_evals: settings.max_evals,
            f_tol: 1e-13 * total_ss.max(f64::MIN_POSITIVE),
            x_tol: 1e-9,
            step: 2.0 / grid.len() as f64 * if dim == 1 { 1.0 } else { 20.0 },
            restarts: 1,
        };
        let mut x = vec![0.0; dim];
        let res = minimize_in_box(
            &nm,
            |u| {
                for j in 0..dim {
                    x[j] = bounds.lower[j] + u[j] * (bounds.upper[j] - bounds.lower[j]);
                }
                if x.iter().any(|v| *v <= 0.0) {
                    return f64::INFINITY;
                }
                profile(stats, shape, &x).rss
            },
            &grid[best.1],
            &vec![0.0; dim],
            &vec![1.0; dim],
        );
        if res.f <= best.0 {
            (bounds.from_unit(&res.x), res.converged)
        } else {
            (bounds.from_unit(&grid[best.1]), false)
        }
    };
    let prof = profile(stats, shape, &nl);
    let at_bound = (0..dim)
        .map(|j| {
            let tol = 1e-6 * (bounds.upper[j] - bounds.lower[j]).max(1.0);
            nl[j] - bounds.lower[j] <= tol || bounds.upper[j] - nl[j] <= tol
        })
        .collect();
    let model = DoseResponseModel::new(shape, prof.theta0, prof.theta1, nl)?;
    let rss = prof.rss.max(0.0);
    let mut fit = FitResult {
        model,
        rss,
        sigma2_hat: if n > p {
            rss / (n - p) as f64
        } else {
            f64::NAN
        },
        aic: 0.0,
        converged,
        at_bound,
        degenerate: prof.degenerate,
    };
    fit.aic = aic(&fit, n);
    Ok(fit)
}

/// `N log(RSS/N) + 2(p + 1)`, counting σ² as a parameter. A perfect fit
/// scores `−∞`.
pub fn aic(fit: &FitResult, n: usize) -> f64 {
    let nf = n as f64;
    let penalty = 2.0 * (fit.model.n_params() + 1) as f64;
    if fit.rss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    nf * (fit.rss / nf).ln() + penalty
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub name: String,
    /// Contrast coefficients on the doses that have observations.
    pub contrast: Vec<f64>,
    pub statistic: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTestResult {
    pub models: Vec<ContrastResult>,
    pub critical_value: f64,
    pub df: usize,
    pub any_signal: bool,
}

/// Contrast test for a dose-response signal, one contrast per candidate
/// shape at its prior guess, Bonferroni-adjusted one-sided t tests.
/// Contrast coefficients are `nᵢ(μᵢ − μ̄)` rescaled to unit norm, where `μᵢ`
/// are the candidate's prior-guess means on the observed doses.
pub fn signal_test(
    data: &Dataset,
    candidates: &CandidateSet,
    alpha_level: f64,
) -> Result<SignalTestResult> {
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance level must lie in (0, 1), got {alpha_level}"
        )));
    }
    let stats = data.stats();
    let obs: Vec<usize> = (0..stats.doses.len())
        .filter(|&i| stats.counts[i] > 0)
        .collect();
    if obs.len() < 2 {
        return Err(Error::Data(
            "contrast test needs observations on at least two doses".into(),
        ));
    }
    let n = stats.n();
    let df = n - obs.len();
    if df == 0 || !(stats.ss_within > 0.0) {
        return Err(Error::Data(
            "pooled variance is zero; the contrast test is undefined".into(),
        ));
    }
    let sigma = (stats.ss_within / df as f64).sqrt();
    let m = candidates.len();
    let tdist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
    let critical_value = tdist.inverse_cdf(1.0 - alpha_level / m as f64);

    let mut models = Vec::with_capacity(m);
    for cand in &candidates.models {
        let guess = cand.prior_guess();
        let mu: Vec<f64> = obs
            .iter()
            .map(|&i| guess.shape.f0(&guess.nonlinear, stats.doses[i]))
            .map(|f| guess.theta0 + guess.theta1 * f)
            .collect();
        // c ∝ nᵢ(μᵢ − μ̄) with the allocation-weighted mean μ̄: the most
        // powerful contrast for this shape, plain centering when balanced
        let mean = mu
            .iter()
            .zip(&obs)
            .map(|(m, &i)| m * stats.counts[i] as f64)
            .sum::<f64>()
            / n as f64;
        let mut c: Vec<f64> = mu
            .iter()
            .zip(&obs)
            .map(|(m, &i)| stats.counts[i] as f64 * (m - mean))
            .collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = mu.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
        if !(norm > 1e-12 * scale) {
            models.push(ContrastResult {
                name: cand.name.clone(),
                contrast: vec![0.0; c.len()],
                statistic: 0.0,
                significant: false,
            });
            continue;
        }
        c.iter_mut().for_each(|v| *v /= norm);
        let est: f64 = c.iter().zip(&obs).map(|(ci, &i)| ci * stats.means[i]).sum();
        let se = sigma
            * c.iter()
                .zip(&obs)
                .map(|(ci, &i)| ci * ci / stats.counts[i] as f64)
                .sum::<f64>()
                .sqrt();
        let statistic = est / se;
        models.push(ContrastResult {
            name: cand.name.clone(),
            contrast: c,
            statistic,
            significant: statistic > critical_value,
        });
    }
    let any_signal = models.iter().any(|r| r.significant);
    Ok(SignalTestResult {
        models,
        critical_value,
        df,
        any_signal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub name: String,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnalysis {
    pub med: Option<f64>,
    pub selected: Option<String>,
    pub signal: Option<SignalTestResult>,
    pub fits: Vec<NamedFit>,
    pub diagnostic: Option<String>,
}

/// Contrast test, then AIC selection among the significant models, then the
/// MED of the selected fit.
pub fn final_med(
    data: &Dataset,
    candidates: &CandidateSet,
    spec: &MedSpec,
    alpha_level: f64,
    settings: &FitSettings,
) -> FinalAnalysis {
    let mut out = FinalAnalysis {
        med: None,
        selected: None,
        signal: None,
        fits: Vec::new(),
        diagnostic: None,
    };
    let signal = match signal_test(data, candidates, alpha_level) {
        Ok(s) => s,
        Err(e) => {
            out.diagnostic = Some(format!("signal test failed: {e}"));
            return out;
        }
    };
    if !signal.any_signal {
        out.diagnostic = Some("no significant dose-response signal".into());
        out.signal = Some(signal);
        return out;
    }
    let stats = data.stats();
    let mut failures = Vec::new();
    for (cand, test) in candidates.models.iter().zip(&signal.models) {
        if !test.significant {
            continue;
        }
        match fit_stats(&stats, cand.shape, &cand.bounds(), settings) {
            Ok(fit) => out.fits.push(NamedFit {
                name: cand.name.clone(),
                fit,
            }),
            Err(e) => failures.push(format!("{}: {e}", cand.name)),
        }
    }
    let best = out
        .fits
        .iter()
        .filter(|f| f.fit.converged && !f.fit.degenerate)
        .min_by(|a, b| a.fit.aic.total_cmp(&b.fit.aic));
    match best {
        Some(b) => {
            out.selected = Some(b.name.clone());
            out.med = b.fit.model.med(spec);
            if out.med.is_none() {
                out.diagnostic = Some(format!("fitted {} has no MED in range", b.name));
            }
        }
        None => {
            failures.push("no significant model produced a converged fit".into());
            out.diagnostic = Some(failures.join("; "));
        }
    }
    out.signal = Some(signal);
    out
}
