//! Model-robust MED-optimal designs.
//!
//! For a model with gradient `g(d, θ)` the normalized information of a
//! design `w` is `M(θ, w) = Σ wᵢ g(dᵢ) g(dᵢ)'` and the delta-method variance
//! of the MED estimator is `V = σ²/N · c'M⁻c` with `c = ∇b(θ)`. Several
//! candidate models are combined through `Σ α_m log V_m`, which is the
//! logarithm of the geometric-mean criterion `Ψ(w) = ∏ V_m^{α_m}`.
//!
//! At an interim analysis the patients already allocated (`n_old`) are fixed
//! and only the next cohort's weights `w_next` are free; the criterion is
//! evaluated at the combined design `(n_old + N_next w_next) / (N_old + N_next)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv_sym, quad_form_pinv, SmallSym};
use crate::models::{DoseResponseModel, MedSpec};
use crate::optim::{angles_to_simplex, simplex_to_angles, NelderMead};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Allocation weights over an ordered dose grid starting at placebo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    doses: Vec<f64>,
    weights: Vec<f64>,
}

impl Design {
    pub fn new(doses: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        validate_doses(&doses)?;
        if weights.len() != doses.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} doses",
                weights.len(),
                doses.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weights must be non-negative: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self { doses, weights })
    }

    /// Rescales non-negative weights onto the simplex.
    pub fn normalized(doses: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        let w = weights.iter().map(|w| w / total).collect();
        Self::new(doses, w)
    }

    pub fn balanced(doses: Vec<f64>) -> Result<Self> {
        let k = doses.len();
        Self::new(doses, vec![1.0 / k as f64; k])
    }

    pub fn doses(&self) -> &[f64] {
        &self.doses
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }
}

pub(crate) fn validate_doses(doses: &[f64]) -> Result<()> {
    if doses.is_empty() {
        return Err(Error::InvalidParameter("empty dose grid".into()));
    }
    if doses[0] != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "first dose must be placebo (0), got {}",
            doses[0]
        )));
    }
    if doses.windows(2).any(|p| !(p[1] > p[0])) || doses.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "doses must be finite and strictly increasing: {doses:?}"
        )));
    }
    Ok(())
}

pub fn info_matrix(model: &DoseResponseModel, design: &Design) -> Result<DMatrix<f64>> {
    let p = model.n_params();
    let mut m = DMatrix::zeros(p, p);
    for (&d, &w) in design.doses.iter().zip(&design.weights) {
        let g = DVector::from_vec(model.gradient(d)?);
        m += w * &g * g.transpose();
    }
    Ok(m)
}

/// Delta-method variance of the MED estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum MedVariance {
    Estimable(f64),
    /// `∇b ∉ Range(M)`: the design cannot identify the MED.
    NonEstimable,
}

impl MedVariance {
    pub fn value(&self) -> Option<f64> {
        match self {
            MedVariance::Estimable(v) => Some(*v),
            MedVariance::NonEstimable => None,
        }
    }
}

pub fn med_variance(
    model: &DoseResponseModel,
    spec: &MedSpec,
    design: &Design,
    sigma2: f64,
    n: f64,
) -> Result<MedVariance> {
    let c = DVector::from_vec(model.med_gradient(spec)?);
    let m = info_matrix(model, design)?;
    Ok(match quad_form_pinv(&m, &c) {
        Some(q) => MedVariance::Estimable(sigma2 / n * q),
        None => MedVariance::NonEstimable,
    })
}

/// One component of the compound criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionTerm {
    pub model: DoseResponseModel,
    pub spec: MedSpec,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundCriterionInput {
    pub terms: Vec<CriterionTerm>,
    pub sigma2: f64,
    pub total_n: f64,
}

impl CompoundCriterionInput {
    /// Validates the model weights and that every model has a differentiable MED.
    pub fn new(terms: Vec<CriterionTerm>, sigma2: f64, total_n: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter("no models in the criterion".into()));
        }
        if terms
            .iter()
            .any(|t| !(t.alpha >= 0.0 && t.alpha.is_finite()))
        {
            return Err(Error::InvalidParameter("model weights must be >= 0".into()));
        }
        let total: f64 = terms.iter().map(|t| t.alpha).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "model weights sum to {total}, not 1"
            )));
        }
        for t in &terms {
            t.model.med_gradient(&t.spec)?;
        }
        if !(sigma2 > 0.0 && total_n > 0.0) {
            return Err(Error::InvalidParameter(
                "sigma2 and total_n must be positive".into(),
            ));
        }
        Ok(Self {
            terms,
            sigma2,
            total_n,
        })
    }
}

/// `Σ α_m log V_m(θ_m, w)`; `+∞` if a model with `α_m > 0` is not estimable.
pub fn compound_criterion(input: &CompoundCriterionInput, design: &Design) -> Result<f64> {
    let mut total = 0.0;
    for t in &input.terms {
        if t.alpha == 0.0 {
            continue;
        }
        match med_variance(&t.model, &t.spec, design, input.sigma2, input.total_n)? {
            MedVariance::Estimable(v) => total += t.alpha * v.ln(),
            MedVariance::NonEstimable => return Ok(f64::INFINITY),
        }
    }
    Ok(total)
}

/// Patients already allocated per dose and the size of the next cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationState {
    pub n_old: Vec<usize>,
    pub n_next: usize,
}

impl AllocationState {
    pub fn new(n_old: Vec<usize>, n_next: usize) -> Result<Self> {
        if n_next == 0 {
            return Err(Error::InvalidParameter("next cohort is empty".into()));
        }
        Ok(Self { n_old, n_next })
    }

    /// Fresh trial: nothing allocated yet.
    pub fn initial(k: usize, n_next: usize) -> Result<Self> {
        Self::new(vec![0; k], n_next)
    }

    pub fn n_old_total(&self) -> usize {
        self.n_old.iter().sum()
    }

    /// Combined design weights `(n_old + N_next w_next) / (N_old + N_next)`.
    pub fn combine(&self, w_next: &[f64]) -> Vec<f64> {
        let total = (self.n_old_total() + self.n_next) as f64;
        self.n_old
            .iter()
            .zip(w_next)
            .map(|(&n, &w)| (n as f64 + self.n_next as f64 * w) / total)
            .collect()
    }
}

struct PreparedTerm {
    alpha: f64,
    c: Vec<f64>,
    outer: Vec<SmallSym>,
    old: SmallSym,
}

/// The next-stage objective `w_next ↦ Σ α_m log V_m(combined design)` with
/// per-dose outer products precomputed.
pub struct NextStageObjective {
    terms: Vec<PreparedTerm>,
    log_scale: f64,
    frac_old: f64,
    frac_next: f64,
    k: usize,
}

impl NextStageObjective {
    pub fn new(
        input: &CompoundCriterionInput,
        alloc: &AllocationState,
        doses: &[f64],
    ) -> Result<Self> {
        validate_doses(doses)?;
        let k = doses.len();
        if alloc.n_old.len() != k {
            return Err(Error::InvalidParameter(format!(
                "allocation has {} doses, grid has {k}",
                alloc.n_old.len()
            )));
        }
        let n_old = alloc.n_old_total() as f64;
        let n_total = n_old + alloc.n_next as f64;
        let mut terms = Vec::new();
        for t in input.terms.iter().filter(|t| t.alpha > 0.0) {
            let c = t.model.med_gradient(&t.spec)?;
            let outer = doses
                .iter()
                .map(|&d| t.model.gradient(d).map(|g| SmallSym::outer(&g)))
                .collect::<Result<Vec<_>>>()?;
            let mut old = SmallSym::zeros(c.len());
            if n_old > 0.0 {
                for (g, &n) in outer.iter().zip(&alloc.n_old) {
                    old.add_scaled(n as f64 / n_old, g);
                }
            }
            terms.push(PreparedTerm {
                alpha: t.alpha,
                c,
                outer,
                old,
            });
        }
        Ok(Self {
            terms,
            log_scale: (input.sigma2 / input.total_n).ln(),
            frac_old: n_old / n_total,
            frac_next: alloc.n_next as f64 / n_total,
            k,
        })
    }

    pub fn n_doses(&self) -> usize {
        self.k
    }

    /// Criterion at the combined design implied by `w_next`.
    pub fn value(&self, w_next: &[f64]) -> f64 {
        let mut total = self.log_scale;
        for t in &self.terms {
            let mut m = t.old;
            for v in m.a.iter_mut() {
                *v *= self.frac_old;
            }
            for (g, &w) in t.outer.iter().zip(w_next) {
                if w != 0.0 {
                    m.add_scaled(self.frac_next * w, g);
                }
            }
            match m.quad_form_inv(&t.c) {
                Some(q) if q > 0.0 => total += t.alpha * q.ln(),
                _ => return f64::INFINITY,
            }
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerSettings {
    pub multistarts: usize,
    pub seed: u64,
    pub nelder_mead: NelderMead,
    /// Doses that may receive patients in the next cohort; all when `None`.
    pub available: Option<Vec<bool>>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            multistarts: 20,
            seed: 0x5eed,
            nelder_mead: NelderMead {
                max_evals: 6000,
                f_tol: 1e-9,
                x_tol: f64::INFINITY,
                step: 0.25,
                restarts: 2,
            },
            available: None,
        }
    }
}

/// Result of a next-stage optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextStageDesign {
    /// Weights for the next cohort.
    pub w_next: Vec<f64>,
    /// Combined design after the next cohort.
    pub combined: Vec<f64>,
    pub criterion: f64,
    pub certificate: Certificate,
    /// Every multistart failed; `w_next` is balanced over the available doses.
    pub fallback: bool,
}

/// Minimizes the compound criterion over next-cohort weights with
/// multistart Nelder–Mead on the angle parameterization of the simplex.
pub fn optimize_next_stage(
    input: &CompoundCriterionInput,
    alloc: &AllocationState,
    doses: &[f64],
    settings: &OptimizerSettings,
) -> Result<NextStageDesign> {
    let objective = NextStageObjective::new(input, alloc, doses)?;
    let k = doses.len();
    let free: Vec<usize> = match &settings.available {
        Some(mask) => {
            if mask.len() != k {
                return Err(Error::InvalidParameter("availability mask length".into()));
            }
            (0..k).filter(|&i| mask[i]).collect()
        }
        None => (0..k).collect(),
    };
    if free.is_empty() {
        return Err(Error::InvalidParameter("no dose available".into()));
    }
    let m = free.len();
    let embed = |sub: &[f64], full: &mut [f64]| {
        full.iter_mut().for_each(|v| *v = 0.0);
        for (&i, &v) in free.iter().zip(sub) {
            full[i] = v;
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut starts: Vec<Vec<f64>> = vec![vec![1.0 / m as f64; m]];
    for _ in 1..settings.multistarts.max(1) {
        let draw: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = draw.iter().sum();
        starts.push(draw.into_iter().map(|v| v / s).collect());
    }

    let mut sub = vec![0.0; m];
    let mut full = vec![0.0; k];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        let z0 = simplex_to_angles(start);
        let res = settings.nelder_mead.minimize(
            |z| {
                angles_to_simplex(z, &mut sub);
                embed(&sub, &mut full);
                objective.value(&full)
            },
            &z0,
        );
        // strict improvement keeps the earliest start on ties
        if best.as_ref().is_none_or(|(f, _)| res.f < *f) {
            best = Some((res.f, res.x));
        }
    }
    let (mut criterion, z) = best.expect("at least one start");
    let mut w_next = vec![0.0; k];
    let mut fallback = false;
    if criterion.is_finite() {
        angles_to_simplex(&z, &mut sub);
        embed(&sub, &mut w_next);
    } else {
        fallback = true;
        embed(&vec![1.0 / m as f64; m], &mut w_next);
        criterion = objective.value(&w_next);
    }
    let certificate = efficiency_bound(input, alloc, doses, &w_next)?;
    Ok(NextStageDesign {
        combined: alloc.combine(&w_next),
        w_next,
        criterion,
        certificate,
        fallback,
    })
}

/// Lower bound on the efficiency of a next-stage design together with the
/// per-dose profile `h(d, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `1 / max_d h(d, w)`; `None` when an information matrix is singular.
    pub bound: Option<f64>,
    pub h: Vec<f64>,
}

/// Efficiency lower bound `1/h*(w)` at the Moore–Penrose inverse of each
/// model's information matrix for the combined design.
pub fn efficiency_bound(
    input: &CompoundCriterionInput,
    alloc: &AllocationState,
    doses: &[f64],
    w_next: &[f64],
) -> Result<Certificate> {
    validate_doses(doses)?;
    let k = doses.len();
    if w_next.len() != k || alloc.n_old.len() != k {
        return Err(Error::InvalidParameter(
            "weight/dose length mismatch".into(),
        ));
    }
    let combined = Design::normalized(doses.to_vec(), alloc.combine(w_next))?;
    let next = Design::normalized(doses.to_vec(), w_next.to_vec())?;
    let mut numer = vec![0.0; k];
    let mut denom = 0.0;
    let mut singular = false;
    for t in input.terms.iter().filter(|t| t.alpha > 0.0) {
        let c = DVector::from_vec(t.model.med_gradient(&t.spec)?);
        let m = info_matrix(&t.model, &combined)?;
        let (g, truncated) = pinv_sym(&m);
        singular |= truncated;
        let gc = &g * &c;
        let cgc = c.dot(&gc);
        if !(cgc > 0.0) {
            singular = true;
            continue;
        }
        let m_next = info_matrix(&t.model, &next)?;
        denom += t.alpha * gc.dot(&(&m_next * &gc)) / cgc;
        for (i, &d) in doses.iter().enumerate() {
            let gd = DVector::from_vec(t.model.gradient(d)?);
            let proj = gd.dot(&gc);
            numer[i] += t.alpha * proj * proj / cgc;
        }
    }
    let h: Vec<f64> = numer.iter().map(|v| v / denom).collect();
    let hmax = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bound = (!singular && hmax.is_finite() && hmax > 0.0).then(|| (1.0 / hmax).min(1.0));
    Ok(Certificate { bound, h })
}

/// Zeroes weights below `tol` and renormalizes, so that numerically
/// negligible optimizer output does not claim a patient when rounded.
pub fn prune_weights(w: &[f64], tol: f64) -> Vec<f64> {
    let kept: Vec<f64> = w.iter().map(|&v| if v < tol { 0.0 } else { v }).collect();
    let total: f64 = kept.iter().sum();
    if total > 0.0 {
        kept.iter().map(|v| v / total).collect()
    } else {
        w.to_vec()
    }
}

/// Efficient apportionment of `n` patients to weights `w`: every dose with
/// positive weight gets at least one patient and the smallest ratio
/// `nᵢ / (n wᵢ)` is as large as possible.
pub fn round_allocation(w: &[f64], n: usize) -> Result<Vec<usize>> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("bad weights {w:?}")));
    }
    let support = w.iter().filter(|v| **v > 0.0).count();
    if support == 0 {
        return Err(Error::InvalidParameter("all weights are zero".into()));
    }
    if n < support {
        return Err(Error::Infeasible(format!(
            "{n} patients cannot cover {support} doses"
        )));
    }
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    let mult = n as f64 - support as f64 / 2.0;
    let mut counts: Vec<usize> = w
        .iter()
        .map(|&v| {
            if v > 0.0 {
                (mult * v).ceil().max(1.0) as usize
            } else {
                0
            }
        })
        .collect();
    let mut sum: usize = counts.iter().sum();
    while sum < n {
        let j = (0..w.len())
            .filter(|&i| w[i] > 0.0)
            .min_by(|&a, &b| (counts[a] as f64 / w[a]).total_cmp(&(counts[b] as f64 / w[b])))
            .expect("support is non-empty");
        counts[j] += 1;
        sum += 1;
    }
    while sum > n {
        let j = (0..w.len())
            .filter(|&i| w[i] > 0.0 && counts[i] > 1)
            .max_by(|&a, &b| {
                ((counts[a] - 1) as f64 / w[a])
                    .total_cmp(&((counts[b] - 1) as f64 / w[b]))
                    .then(b.cmp(&a))
            })
            .expect("n >= support");
        counts[j] -= 1;
        sum -= 1;
    }
    Ok(counts)
}
