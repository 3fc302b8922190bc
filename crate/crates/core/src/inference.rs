//! Bayesian updating of candidate models.
//!
//! Conditional on the shape parameters `θ⁰`, every candidate is a linear
//! model in `θ* = (θ₀, θ₁)`, so a normal-inverse-gamma prior on `(θ*, σ²)`
//! integrates out in closed form. What remains is a one- or two-dimensional
//! integral over a bounded box of shape parameters, done with a midpoint or
//! Fibonacci lattice rule. The same abscissas give the shrinkage estimate of
//! `θ⁰`.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::models::{DoseResponseModel, MedSpec, ParameterBounds, Shape};
use crate::optim::{minimize_in_box, NelderMead};

/// Normal-inverse-gamma prior
/// `p(θ*, σ²) ∝ (σ²)^{−(ν+4)/2} exp(−{(θ*−μ)'V⁻¹(θ*−μ) + a} / (2σ²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NigPrior {
    pub mu: [f64; 2],
    pub v: [[f64; 2]; 2],
    pub a: f64,
    pub nu: f64,
}

impl NigPrior {
    pub fn new(mu: [f64; 2], v: [[f64; 2]; 2], a: f64, nu: f64) -> Result<Self> {
        let det = v[0][0] * v[1][1] - v[0][1] * v[1][0];
        if !(v[0][0] > 0.0
            && det > 0.0
            && (v[0][1] - v[1][0]).abs() <= 1e-12 * v[0][0].abs().max(v[1][1].abs()))
        {
            return Err(Error::InvalidParameter(format!(
                "V must be symmetric positive definite: {v:?}"
            )));
        }
        if !(a > 0.0 && nu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "NIG needs a > 0 and nu > 0, got a = {a}, nu = {nu}"
            )));
        }
        Ok(Self { mu, v, a, nu })
    }

    /// Mode of the marginal inverse-gamma prior on σ².
    pub fn sigma2_mode(&self) -> f64 {
        self.a / (self.nu + 2.0)
    }

    /// Covariance of the marginal t prior on θ*, finite for ν > 2.
    pub fn theta_covariance(&self) -> Option<[[f64; 2]; 2]> {
        (self.nu > 2.0).then(|| {
            let s = self.a / (self.nu - 2.0);
            [
                [s * self.v[0][0], s * self.v[0][1]],
                [s * self.v[1][0], s * self.v[1][1]],
            ]
        })
    }

    fn precompute(&self) -> NigCache {
        let v = self.v;
        let det = v[0][0] * v[1][1] - v[0][1] * v[1][0];
        let vinv = [
            [v[1][1] / det, -v[0][1] / det],
            [-v[1][0] / det, v[0][0] / det],
        ];
        let nu_n_const = ln_gamma(self.nu / 2.0);
        NigCache {
            vinv,
            log_det_v: det.ln(),
            vinv_mu: [
                vinv[0][0] * self.mu[0] + vinv[0][1] * self.mu[1],
                vinv[1][0] * self.mu[0] + vinv[1][1] * self.mu[1],
            ],
            lgamma_nu: nu_n_const,
        }
    }
}

struct NigCache {
    vinv: [[f64; 2]; 2],
    log_det_v: f64,
    vinv_mu: [f64; 2],
    lgamma_nu: f64,
}

/// Moments used to elicit the NIG prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elicitation {
    pub placebo_mean: f64,
    pub placebo_var: f64,
    pub maxeff_mean: f64,
    pub maxeff_var: f64,
    pub sigma2_mode: f64,
    pub nu: f64,
}

/// Builds the NIG prior whose marginal t distribution gives the placebo
/// effect and the maximum effect over `[0, max_dose]` the requested
/// independent moments, with the shape parameters fixed at `nl_mode`.
pub fn elicit_nig(
    shape: Shape,
    nl_mode: &[f64],
    max_dose: f64,
    e: &Elicitation,
) -> Result<NigPrior> {
    shape.check_nonlinear(nl_mode)?;
    if !(e.placebo_var > 0.0 && e.maxeff_var > 0.0) {
        return Err(Error::Elicitation("variances must be positive".into()));
    }
    if !(e.nu > 2.0) {
        return Err(Error::Elicitation(format!(
            "need nu > 2 for finite prior covariance, got {}",
            e.nu
        )));
    }
    if !(e.sigma2_mode > 0.0) {
        return Err(Error::Elicitation("sigma2 mode must be positive".into()));
    }
    // (placebo, maxeff)' = A θ*
    let f_lo = shape.f0(nl_mode, 0.0);
    let top = shape.argmax_on(nl_mode, 0.0, max_dose);
    let span = shape.f0(nl_mode, top) - f_lo;
    if !(span.abs() > 1e-12) {
        return Err(Error::Elicitation(format!(
            "{} shape is flat over [0, {max_dose}] at {nl_mode:?}",
            shape.name()
        )));
    }
    // A = [[1, f_lo], [0, span]],  A⁻¹ = [[1, -f_lo/span], [0, 1/span]]
    let ainv = [[1.0, -f_lo / span], [0.0, 1.0 / span]];
    let mu = [
        ainv[0][0] * e.placebo_mean + ainv[0][1] * e.maxeff_mean,
        ainv[1][1] * e.maxeff_mean,
    ];
    let d = [e.placebo_var, e.maxeff_var];
    let mut cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] = (0..2).map(|k| ainv[i][k] * d[k] * ainv[j][k]).sum();
        }
    }
    let a = e.sigma2_mode * (e.nu + 2.0);
    let s = (e.nu - 2.0) / a;
    let v = [
        [cov[0][0] * s, cov[0][1] * s],
        [cov[1][0] * s, cov[1][1] * s],
    ];
    NigPrior::new(mu, v, a, e.nu)
}

/// Scaled beta prior for one shape parameter, parameterized by its mode and
/// the curvature `S = α + β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPrior {
    pub lower: f64,
    pub upper: f64,
    pub mode: f64,
    pub s: f64,
}

impl ParamPrior {
    pub fn new(lower: f64, upper: f64, mode: f64, s: f64) -> Result<Self> {
        if !(lower < mode && mode < upper && lower.is_finite() && upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "prior mode {mode} must lie strictly inside [{lower}, {upper}]"
            )));
        }
        if !(s > 2.0) {
            return Err(Error::InvalidParameter(format!(
                "beta curvature S must exceed 2, got {s}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            mode,
            s,
        })
    }

    /// `(α, β)` with the requested mode and `α + β = S`.
    pub fn shape_params(&self) -> (f64, f64) {
        let frac = (self.mode - self.lower) / (self.upper - self.lower);
        let alpha = 1.0 + (self.s - 2.0) * frac;
        (alpha, self.s - alpha)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        beta_log_density(x, self.lower, self.upper, self.mode, self.s)
    }

    /// Prior probability of each of `n` equal-width cells of `[lower, upper]`.
    pub fn cell_masses(&self, n: usize) -> Vec<f64> {
        let (a, b) = self.shape_params();
        let cdf: Vec<f64> = (0..=n)
            .map(|i| beta_reg(a, b, i as f64 / n as f64))
            .collect();
        cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
    }
}

/// Log density of the scaled beta on `[lower, upper]` with the given mode
/// and `α + β = s`; `−∞` outside the open interval.
pub fn beta_log_density(x: f64, lower: f64, upper: f64, mode: f64, s: f64) -> f64 {
    if !(x > lower && x < upper) {
        return f64::NEG_INFINITY;
    }
    let width = upper - lower;
    let alpha = 1.0 + (s - 2.0) * (mode - lower) / width;
    let beta = s - alpha;
    let ln_b = ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(s);
    (alpha - 1.0) * (x - lower).ln() + (beta - 1.0) * (upper - x).ln()
        - (s - 1.0) * width.ln()
        - ln_b
}

const FIBONACCI: [usize; 24] = [
    1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377, 610, 987, 1597, 2584, 4181, 6765, 10946,
    17711, 28657, 46368, 75025,
];

/// Quasi-uniform abscissas in `[0, 1]^dim`: the midpoint rule for `dim = 1`
/// and the Fibonacci lattice with generator `(1, F_{j−1})` for `dim = 2`
/// (`n` must then be a Fibonacci number).
pub fn glp_grid(n: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    let nf = n as f64;
    match dim {
        1 => Ok((1..=n).map(|i| vec![(i as f64 - 0.5) / nf]).collect()),
        2 => {
            let j = FIBONACCI
                .iter()
                .position(|&f| f == n)
                .filter(|&j| j > 0)
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("{n} is not a supported Fibonacci number"))
                })?;
            let h = FIBONACCI[j - 1];
            Ok((1..=n)
                .map(|i| {
                    let second = ((i * h) % n) as f64 / nf - 0.5 / nf;
                    vec![(i as f64 - 0.5) / nf, second.rem_euclid(1.0)]
                })
                .collect())
        }
        _ => Err(Error::InvalidParameter(format!(
            "lattice grids support dimension 1 or 2, got {dim}"
        ))),
    }
}

/// Observations grouped by dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    doses: Vec<f64>,
    responses: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(doses: Vec<f64>) -> Result<Self> {
        crate::design::validate_doses(&doses)?;
        let k = doses.len();
        Ok(Self {
            doses,
            responses: vec![Vec::new(); k],
        })
    }

    pub fn doses(&self) -> &[f64] {
        &self.doses
    }

    pub fn dose_index(&self, dose: f64) -> Option<usize> {
        self.doses
            .iter()
            .position(|&d| (d - dose).abs() <= 1e-9 * d.abs().max(1.0))
    }

    pub fn push(&mut self, dose: f64, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::Data(format!("non-finite response {y}")));
        }
        let i = self
            .dose_index(dose)
            .ok_or_else(|| Error::Data(format!("dose {dose} is not in the grid")))?;
        self.responses[i].push(y);
        Ok(())
    }

    pub fn push_at(&mut self, index: usize, y: f64) {
        self.responses[index].push(y);
    }

    pub fn responses(&self, index: usize) -> &[f64] {
        &self.responses[index]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.responses.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.responses.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-dose sufficient statistics. Responses are summed in sorted order,
    /// so the result does not depend on arrival order.
    pub fn stats(&self) -> SufficientStats {
        let k = self.doses.len();
        let mut counts = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut ss = 0.0;
        let mut buf = Vec::new();
        for ys in &self.responses {
            buf.clear();
            buf.extend_from_slice(ys);
            buf.sort_by(f64::total_cmp);
            let n = buf.len();
            let mean = if n > 0 {
                buf.iter().sum::<f64>() / n as f64
            } else {
                0.0
            };
            ss += buf.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>();
            counts.push(n);
            means.push(mean);
        }
        SufficientStats {
            doses: self.doses.clone(),
            counts,
            means,
            ss_within: ss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub doses: Vec<f64>,
    pub counts: Vec<usize>,
    pub means: Vec<f64>,
    /// Pooled within-dose sum of squares.
    pub ss_within: f64,
}

impl SufficientStats {
    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    fn log_integrated(&self, shape: Shape, nl: &[f64], prior: &NigPrior, cache: &NigCache) -> f64 {
        let mut p = cache.vinv;
        let mut r = cache.vinv_mu;
        let mut f = [0.0; 16];
        for (i, &d) in self.doses.iter().enumerate() {
            let n = self.counts[i];
            if n == 0 {
                continue;
            }
            let fi = shape.f0(nl, d);
            f[i.min(15)] = fi;
            let nf = n as f64;
            p[0][0] += nf;
            p[0][1] += nf * fi;
            p[1][0] += nf * fi;
            p[1][1] += nf * fi * fi;
            r[0] += nf * self.means[i];
            r[1] += nf * self.means[i] * fi;
        }
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let mu_n = [
            (p[1][1] * r[0] - p[0][1] * r[1]) / det,
            (p[0][0] * r[1] - p[1][0] * r[0]) / det,
        ];
        let mut resid = self.ss_within;
        for (i, &d) in self.doses.iter().enumerate() {
            let n = self.counts[i];
            if n == 0 {
                continue;
            }
            let fi = if i < 16 { f[i] } else { shape.f0(nl, d) };
            let e = self.means[i] - mu_n[0] - mu_n[1] * fi;
            resid += n as f64 * e * e;
        }
        let dm = [mu_n[0] - prior.mu[0], mu_n[1] - prior.mu[1]];
        let pen = dm[0] * (cache.vinv[0][0] * dm[0] + cache.vinv[0][1] * dm[1])
            + dm[1] * (cache.vinv[1][0] * dm[0] + cache.vinv[1][1] * dm[1]);
        let a_n = prior.a + resid + pen;
        let n = self.n() as f64;
        let nu_n = prior.nu + n;
        -0.5 * n * std::f64::consts::PI.ln() - 0.5 * det.ln() - 0.5 * cache.log_det_v
            + 0.5 * prior.nu * prior.a.ln()
            - 0.5 * nu_n * a_n.ln()
            + ln_gamma(0.5 * nu_n)
            - cache.lgamma_nu
    }

    /// Conditional posterior location of θ* given θ⁰.
    fn posterior_linear(&self, shape: Shape, nl: &[f64], cache: &NigCache) -> [f64; 2] {
        let mut p = cache.vinv;
        let mut r = cache.vinv_mu;
        for (i, &d) in self.doses.iter().enumerate() {
            let n = self.counts[i] as f64;
            if n == 0.0 {
                continue;
            }
            let fi = shape.f0(nl, d);
            p[0][0] += n;
            p[0][1] += n * fi;
            p[1][0] += n * fi;
            p[1][1] += n * fi * fi;
            r[0] += n * self.means[i];
            r[1] += n * self.means[i] * fi;
        }
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        [
            (p[1][1] * r[0] - p[0][1] * r[1]) / det,
            (p[0][0] * r[1] - p[1][0] * r[0]) / det,
        ]
    }
}

/// Log of `∫∫ p(y | θ*, σ², θ⁰) p(θ*, σ² | θ⁰) d(θ*, σ²)`.
pub fn integrated_likelihood(
    data: &Dataset,
    shape: Shape,
    theta0: &[f64],
    prior: &NigPrior,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("integrated likelihood needs data".into()));
    }
    shape.check_nonlinear(theta0)?;
    let v = data
        .stats()
        .log_integrated(shape, theta0, prior, &prior.precompute());
    if v.is_nan() {
        return Err(Error::Numerical("integrated likelihood is NaN".into()));
    }
    Ok(v)
}

/// A candidate model with its priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub name: String,
    pub shape: Shape,
    pub nig: NigPrior,
    pub shape_prior: Vec<ParamPrior>,
    pub prior_prob: f64,
}

impl CandidateModel {
    pub fn new(
        name: impl Into<String>,
        shape: Shape,
        nig: NigPrior,
        shape_prior: Vec<ParamPrior>,
        prior_prob: f64,
    ) -> Result<Self> {
        if shape_prior.len() != shape.n_nonlinear() {
            return Err(Error::InvalidParameter(format!(
                "{} needs {} shape priors, got {}",
                shape.name(),
                shape.n_nonlinear(),
                shape_prior.len()
            )));
        }
        if !(prior_prob >= 0.0 && prior_prob.is_finite()) {
            return Err(Error::InvalidParameter(
                "prior probability must be >= 0".into(),
            ));
        }
        let model = Self {
            name: name.into(),
            shape,
            nig,
            shape_prior,
            prior_prob,
        };
        shape.check_nonlinear(&model.prior_mode())?;
        Ok(model)
    }

    /// Elicits the NIG part from placebo/max-effect moments at the prior mode.
    pub fn elicited(
        name: impl Into<String>,
        shape: Shape,
        shape_prior: Vec<ParamPrior>,
        elicitation: &Elicitation,
        max_dose: f64,
        prior_prob: f64,
    ) -> Result<Self> {
        let mode: Vec<f64> = shape_prior.iter().map(|p| p.mode).collect();
        let nig = elicit_nig(shape, &mode, max_dose, elicitation)?;
        Self::new(name, shape, nig, shape_prior, prior_prob)
    }

    pub fn prior_mode(&self) -> Vec<f64> {
        self.shape_prior.iter().map(|p| p.mode).collect()
    }

    pub fn bounds(&self) -> ParameterBounds {
        ParameterBounds {
            lower: self.shape_prior.iter().map(|p| p.lower).collect(),
            upper: self.shape_prior.iter().map(|p| p.upper).collect(),
        }
    }

    /// Prior best guess: NIG mean for θ*, beta modes for θ⁰.
    pub fn prior_guess(&self) -> DoseResponseModel {
        DoseResponseModel {
            shape: self.shape,
            theta0: self.nig.mu[0],
            theta1: self.nig.mu[1],
            nonlinear: self.prior_mode(),
        }
    }

    pub fn log_shape_prior(&self, nl: &[f64]) -> f64 {
        self.shape_prior
            .iter()
            .zip(nl)
            .map(|(p, &x)| p.log_density(x))
            .sum()
    }

    /// `log p(y | θ⁰) + log p(θ⁰)`.
    pub fn log_posterior_kernel(&self, stats: &SufficientStats, nl: &[f64]) -> f64 {
        let lp = self.log_shape_prior(nl);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + stats.log_integrated(self.shape, nl, &self.nig, &self.nig.precompute())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub models: Vec<CandidateModel>,
}

impl CandidateSet {
    pub fn new(models: Vec<CandidateModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidParameter("empty candidate set".into()));
        }
        let total: f64 = models.iter().map(|m| m.prior_prob).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter(
                "prior model probabilities sum to zero".into(),
            ));
        }
        Ok(Self { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Prior model probabilities normalized to sum to one.
    pub fn prior_probs(&self) -> Vec<f64> {
        let total: f64 = self.models.iter().map(|m| m.prior_prob).sum();
        self.models.iter().map(|m| m.prior_prob / total).collect()
    }
}

#[derive(Debug, Clone)]
pub struct InferenceSettings {
    pub grid_1d: usize,
    pub grid_2d: usize,
    /// Polish the lattice maximizer with a bounded Nelder–Mead.
    pub refine: bool,
    pub refine_evals: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            grid_1d: 100,
            grid_2d: 1597,
            refine: true,
            refine_evals: 200,
        }
    }
}

impl InferenceSettings {
    pub fn grid_size(&self, dim: usize) -> usize {
        if dim == 1 {
            self.grid_1d
        } else {
            self.grid_2d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPosterior {
    pub name: String,
    pub log_marginal: f64,
    pub prob: f64,
    pub estimate: DoseResponseModel,
    pub med: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub models: Vec<ModelPosterior>,
}

impl PosteriorSummary {
    pub fn probs(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.prob).collect()
    }
}

/// `log Σ Lᵢ mᵢ` with `Lᵢ` the likelihood at cell midpoints and `mᵢ` the
/// prior cell masses.
fn log_cell_sum(ll: &[f64], mass: &[f64]) -> f64 {
    let top = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = ll.iter().zip(mass).map(|(v, m)| (v - top).exp() * m).sum();
    top + sum.ln()
}

struct Marginal {
    log_marginal: f64,
    estimate: DoseResponseModel,
}

fn marginal_and_estimate(
    stats: &SufficientStats,
    model: &CandidateModel,
    settings: &InferenceSettings,
) -> Result<Marginal> {
    let cache = model.nig.precompute();
    let dim = model.shape.n_nonlinear();
    if stats.n() == 0 {
        return Ok(Marginal {
            log_marginal: 0.0,
            estimate: model.prior_guess(),
        });
    }
    if dim == 0 {
        let lm = stats.log_integrated(model.shape, &[], &model.nig, &cache);
        let lin = stats.posterior_linear(model.shape, &[], &cache);
        return Ok(Marginal {
            log_marginal: lm,
            estimate: DoseResponseModel::new(model.shape, lin[0], lin[1], vec![])?,
        });
    }
    let bounds = model.bounds();
    let grid = glp_grid(settings.grid_size(dim), dim)?;
    let mut kernel = Vec::with_capacity(grid.len());
    let mut prior_mass = 0.0;
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut nl = vec![0.0; dim];
    for u in &grid {
        for j in 0..dim {
            nl[j] = bounds.lower[j] + u[j] * (bounds.upper[j] - bounds.lower[j]);
        }
        let lp = model.log_shape_prior(&nl);
        if lp == f64::NEG_INFINITY {
            kernel.push((lp, lp));
            continue;
        }
        prior_mass += lp.exp();
        let ll = stats.log_integrated(model.shape, &nl, &model.nig, &cache);
        if lp + ll > best.0 {
            best = (lp + ll, kernel.len());
        }
        kernel.push((lp, ll));
    }
    if best.0 == f64::NEG_INFINITY || best.0.is_nan() {
        return Err(Error::Numerical(format!(
            "all lattice evaluations failed for {}",
            model.name
        )));
    }
    let log_marginal = if dim == 1 {
        let ll: Vec<f64> = kernel.iter().map(|k| k.1).collect();
        log_cell_sum(&ll, &model.shape_prior[0].cell_masses(grid.len()))
    } else {
        let top = kernel
            .iter()
            .map(|k| k.0 + k.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = kernel.iter().map(|k| (k.0 + k.1 - top).exp()).sum();
        top + (sum / prior_mass).ln()
    };

    let mut theta_nl = bounds.from_unit(&grid[best.1]);
    if settings.refine {
        let nm = NelderMead {
            max_evals: settings.refine_evals,
            f_tol: 1e-10,
            x_tol: 1e-10,
            step: 0.5 / settings.grid_size(dim) as f64 * 4.0,
            restarts: 0,
        };
        let u0 = grid[best.1].clone();
        let mut x = vec![0.0; dim];
        let res = minimize_in_box(
            &nm,
            |u| {
                for j in 0..dim {
                    x[j] = bounds.lower[j] + u[j] * (bounds.upper[j] - bounds.lower[j]);
                }
                -model.log_posterior_kernel(stats, &x)
            },
            &u0,
            &vec![0.0; dim],
            &vec![1.0; dim],
        );
        if -res.f > best.0 {
            theta_nl = bounds.from_unit(&res.x);
        }
    }
    let lin = stats.posterior_linear(model.shape, &theta_nl, &cache);
    Ok(Marginal {
        log_marginal,
        estimate: DoseResponseModel::new(model.shape, lin[0], lin[1], theta_nl)?,
    })
}

/// Shrinkage estimate `θ̃ = (θ̃*, θ̃⁰)`: the maximizer of the marginal
/// posterior of θ⁰ followed by the conditional posterior location of θ*.
pub fn shrinkage_estimate(
    data: &Dataset,
    model: &CandidateModel,
    settings: &InferenceSettings,
) -> Result<DoseResponseModel> {
    Ok(marginal_and_estimate(&data.stats(), model, settings)?.estimate)
}

/// Posterior model probabilities, shrinkage estimates and their MEDs.
pub fn posterior_model_probs(
    data: &Dataset,
    candidates: &CandidateSet,
    spec: &MedSpec,
    settings: &InferenceSettings,
) -> Result<PosteriorSummary> {
    let stats = data.stats();
    let priors = candidates.prior_probs();
    let marginals = candidates
        .models
        .iter()
        .map(|m| marginal_and_estimate(&stats, m, settings))
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<f64> = marginals
        .iter()
        .zip(&priors)
        .map(|(m, p)| p.ln() + m.log_marginal)
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Numerical(
            "every model has zero marginal likelihood".into(),
        ));
    }
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let models = candidates
        .models
        .iter()
        .zip(marginals)
        .zip(weights)
        .map(|((cand, m), w)| ModelPosterior {
            name: cand.name.clone(),
            log_marginal: m.log_marginal,
            prob: w / total,
            med: m.estimate.med(spec),
            estimate: m.estimate,
        })
        .collect();
    Ok(PosteriorSummary { models })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asthma() -> Elicitation {
        Elicitation {
            placebo_mean: 100.0,
            placebo_var: 100_000.0,
            maxeff_mean: 300.0,
            maxeff_var: 100_000.0,
            sigma2_mode: 350.0 * 350.0,
            nu: 4.0,
        }
    }

    #[test]
    fn elicitation_examples() {
        let p = elicit_nig(Shape::Emax, &[20.0], 50.0, &asthma()).unwrap();
        assert!((p.mu[0] - 100.0).abs() < 1e-9);
        assert!((p.mu[1] - 420.0).abs() < 1e-9);
        assert!((p.a - 6.0 * 350.0 * 350.0).abs() < 1e-6);
        assert!((p.sigma2_mode() - 350.0 * 350.0).abs() < 1e-6);
        // marginal covariance of (placebo, maxeff) is diag(1e5, 1e5)
        let cov = p.theta_covariance().unwrap();
        let scale = 50.0 / 70.0;
        assert!((cov[0][0] - 1e5).abs() < 1e-6);
        assert!((cov[1][1] * scale * scale - 1e5).abs() < 1e-6);
        assert!(cov[0][1].abs() < 1e-9);

        let lin = elicit_nig(Shape::Linear, &[], 50.0, &asthma()).unwrap();
        assert!((lin.mu[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn elicitation_matches_logistic_table_values() {
        let p = elicit_nig(Shape::Logistic, &[17.5, 3.3], 50.0, &asthma()).unwrap();
        assert!((p.mu[0] - 98.0).abs() < 1.0);
        assert!((p.mu[1] - 302.0).abs() < 1.0);
        let p = elicit_nig(Shape::Logistic, &[50.0, 11.5], 50.0, &asthma()).unwrap();
        assert!((p.mu[0] - 92.0).abs() < 1.0);
        assert!((p.mu[1] - 615.0).abs() < 1.0);
    }

    #[test]
    fn elicitation_errors() {
        let mut e = asthma();
        e.nu = 2.0;
        assert!(matches!(
            elicit_nig(Shape::Emax, &[20.0], 50.0, &e),
            Err(Error::Elicitation(_))
        ));
        // beta bump peaked at 0 on the dose range is flat for the effect
        assert!(elicit_nig(
            Shape::ScaledBeta { scale: 60.0 },
            &[0.43, 0.6],
            0.0,
            &asthma()
        )
        .is_err());
    }

    #[test]
    fn beta_prior_shape() {
        let p = ParamPrior::new(0.0, 1.0, 0.5, 4.0).unwrap();
        assert_eq!(p.shape_params(), (2.0, 2.0));
        assert!((p.log_density(0.3) - p.log_density(0.7)).abs() < 1e-12);
        let q = ParamPrior::new(0.5, 75.0, 20.0, 10.0).unwrap();
        let at_mode = q.log_density(20.0);
        for x in [19.0, 19.9, 20.1, 21.0, 5.0, 60.0] {
            assert!(q.log_density(x) < at_mode);
        }
        assert_eq!(q.log_density(0.4), f64::NEG_INFINITY);
        assert_eq!(q.log_density(75.0), f64::NEG_INFINITY);
        assert!(ParamPrior::new(0.0, 1.0, 0.5, 2.0).is_err());
        assert!(ParamPrior::new(0.0, 1.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn grid_examples() {
        let g = glp_grid(4, 1).unwrap();
        assert_eq!(g, vec![vec![0.125], vec![0.375], vec![0.625], vec![0.875]]);
        assert_eq!(glp_grid(100, 1).unwrap().len(), 100);
        let g2 = glp_grid(1597, 2).unwrap();
        assert_eq!(g2.len(), 1597);
        assert!(g2.iter().all(|p| p.iter().all(|&x| x > 0.0 && x < 1.0)));
        assert!(glp_grid(1000, 2).is_err());
        assert!(glp_grid(10, 3).is_err());
    }

    #[test]
    fn dataset_rejects_unknown_dose() {
        let mut d = Dataset::new(vec![0.0, 10.0]).unwrap();
        assert!(d.push(5.0, 1.0).is_err());
        assert!(d.push(10.0, f64::INFINITY).is_err());
        d.push(10.0, 3.0).unwrap();
        assert_eq!(d.counts(), vec![0, 1]);
    }

    #[test]
    fn integrated_likelihood_needs_data() {
        let d = Dataset::new(vec![0.0, 10.0]).unwrap();
        let p = elicit_nig(Shape::Emax, &[20.0], 50.0, &asthma()).unwrap();
        assert!(integrated_likelihood(&d, Shape::Emax, &[20.0], &p).is_err());
    }

    #[test]
    fn integrated_likelihood_stays_finite_for_extreme_responses() {
        let mut d = Dataset::new(vec![0.0, 10.0, 50.0]).unwrap();
        let p = elicit_nig(Shape::Emax, &[20.0], 50.0, &asthma()).unwrap();
        d.push(0.0, 100.0).unwrap();
        let mut prev = integrated_likelihood(&d, Shape::Emax, &[20.0], &p).unwrap();
        for y in [1e3, 1e5, 1e7, 1e9] {
            let mut e = d.clone();
            e.push(50.0, y).unwrap();
            let v = integrated_likelihood(&e, Shape::Emax, &[20.0], &p).unwrap();
            assert!(v.is_finite());
            assert!(v < prev);
            prev = v;
        }
    }
}
