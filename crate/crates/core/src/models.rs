//! Candidate dose-response shapes.
//!
//! Every model is written as `f(d, θ) = θ₀ + θ₁·f⁰(d, θ⁰)` where the
//! location/scale pair `(θ₀, θ₁)` enters linearly and the shape function
//! `f⁰` carries the nonlinear parameters `θ⁰`:
//!
//! | shape        | `f⁰(d, θ⁰)`                                   | `θ⁰`        |
//! |--------------|-----------------------------------------------|-------------|
//! | Emax         | `d / (ed50 + d)`                              | `ed50`      |
//! | Logistic     | `1 / (1 + exp((ed50 - d) / delta))`           | `ed50, delta` |
//! | Scaled beta  | `B(a, b) (d/s)^a (1 - d/s)^b`                 | `a, b`      |
//! | Linear       | `d`                                           | none        |
//!
//! with `B(a, b) = (a + b)^(a + b) / (a^a b^b)`, which scales the beta
//! bump so that its maximum is exactly one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Emax,
    Logistic,
    /// Unimodal beta bump on `[0, scale]`.
    ScaledBeta {
        scale: f64,
    },
    Linear,
}

impl Shape {
    pub fn n_nonlinear(&self) -> usize {
        match self {
            Shape::Emax => 1,
            Shape::Logistic | Shape::ScaledBeta { .. } => 2,
            Shape::Linear => 0,
        }
    }

    /// Total number of mean parameters `2 + len(θ⁰)`.
    pub fn n_params(&self) -> usize {
        2 + self.n_nonlinear()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Emax => "emax",
            Shape::Logistic => "logistic",
            Shape::ScaledBeta { .. } => "scaled_beta",
            Shape::Linear => "linear",
        }
    }

    /// Largest dose the shape is defined for.
    pub fn max_dose(&self) -> f64 {
        match self {
            Shape::ScaledBeta { scale } => *scale,
            _ => f64::INFINITY,
        }
    }

    pub fn check_dose(&self, d: f64) -> Result<()> {
        let upper = self.max_dose();
        if d.is_nan() || d < 0.0 || d > upper {
            return Err(Error::Domain {
                dose: d,
                lower: 0.0,
                upper,
            });
        }
        Ok(())
    }

    pub fn check_nonlinear(&self, nl: &[f64]) -> Result<()> {
        if nl.len() != self.n_nonlinear() {
            return Err(Error::InvalidParameter(format!(
                "{} expects {} nonlinear parameters, got {}",
                self.name(),
                self.n_nonlinear(),
                nl.len()
            )));
        }
        if nl.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{} nonlinear parameters must be finite and positive: {nl:?}",
                self.name()
            )));
        }
        if let Shape::ScaledBeta { scale } = self {
            if !(scale.is_finite() && *scale > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "scaled beta needs a positive scale, got {scale}"
                )));
            }
        }
        Ok(())
    }

    /// Shape function `f⁰(d, θ⁰)`. Inputs are not validated.
    #[inline]
    pub fn f0(&self, nl: &[f64], d: f64) -> f64 {
        match *self {
            Shape::Emax => d / (nl[0] + d),
            Shape::Logistic => 1.0 / (1.0 + ((nl[0] - d) / nl[1]).exp()),
            Shape::ScaledBeta { scale } => {
                let x = d / scale;
                if x <= 0.0 || x >= 1.0 {
                    return 0.0;
                }
                let (a, b) = (nl[0], nl[1]);
                (beta_log_norm(a, b) + a * x.ln() + b * (1.0 - x).ln()).exp()
            }
            Shape::Linear => d,
        }
    }

    /// Partial derivatives `∂f⁰/∂θ⁰`; unused slots are zero.
    #[inline]
    pub fn f0_partials(&self, nl: &[f64], d: f64) -> [f64; 2] {
        match *self {
            Shape::Emax => {
                let s = nl[0] + d;
                [-d / (s * s), 0.0]
            }
            Shape::Logistic => {
                let (ed50, delta) = (nl[0], nl[1]);
                let f = self.f0(nl, d);
                let q = f * (1.0 - f);
                [-q / delta, q * (ed50 - d) / (delta * delta)]
            }
            Shape::ScaledBeta { scale } => {
                let x = d / scale;
                if x <= 0.0 || x >= 1.0 {
                    // x^a ln x -> 0 at both ends
                    return [0.0, 0.0];
                }
                let (a, b) = (nl[0], nl[1]);
                let f = self.f0(nl, d);
                [
                    f * (((a + b) / a).ln() + x.ln()),
                    f * (((a + b) / b).ln() + (1.0 - x).ln()),
                ]
            }
            Shape::Linear => [0.0, 0.0],
        }
    }

    /// Slope `∂f⁰/∂d`.
    #[inline]
    pub fn f0_slope(&self, nl: &[f64], d: f64) -> f64 {
        match *self {
            Shape::Emax => {
                let s = nl[0] + d;
                nl[0] / (s * s)
            }
            Shape::Logistic => {
                let f = self.f0(nl, d);
                f * (1.0 - f) / nl[1]
            }
            Shape::ScaledBeta { scale } => {
                if d <= 0.0 || d >= scale {
                    return 0.0;
                }
                let f = self.f0(nl, d);
                f * (nl[0] / d - nl[1] / (scale - d))
            }
            Shape::Linear => 1.0,
        }
    }

    /// Dose at which the shape attains its maximum over `[lo, hi]`.
    pub fn argmax_on(&self, nl: &[f64], lo: f64, hi: f64) -> f64 {
        match *self {
            Shape::ScaledBeta { scale } => {
                let mode = scale * nl[0] / (nl[0] + nl[1]);
                mode.clamp(lo, hi)
            }
            _ => hi,
        }
    }

    /// Generalized inverse `inf{z ∈ [lo, hi] : f⁰(z) ≥ x}`, or `None` when
    /// the level is never reached on `[lo, hi]`. For the scaled beta only the
    /// ascending branch is searched.
    pub fn inverse(&self, nl: &[f64], x: f64, lo: f64, hi: f64) -> Option<f64> {
        if self.f0(nl, lo) >= x {
            return Some(lo);
        }
        let z = match *self {
            Shape::Emax => {
                if x >= 1.0 {
                    return None;
                }
                nl[0] * x / (1.0 - x)
            }
            Shape::Logistic => {
                if x >= 1.0 {
                    return None;
                }
                nl[0] - nl[1] * (1.0 / x - 1.0).ln()
            }
            Shape::Linear => x,
            Shape::ScaledBeta { .. } => {
                let top = self.argmax_on(nl, lo, hi);
                if self.f0(nl, top) < x {
                    return None;
                }
                let (mut a, mut b) = (lo, top);
                loop {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    if self.f0(nl, mid) >= x {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                b
            }
        };
        (z <= hi).then_some(z.max(lo))
    }
}

/// `ln B(a, b)` for the scaled beta normalizer.
#[inline]
fn beta_log_norm(a: f64, b: f64) -> f64 {
    (a + b) * (a + b).ln() - a * a.ln() - b * b.ln()
}

/// A fully parameterized dose-response curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseResponseModel {
    #[serde(flatten)]
    pub shape: Shape,
    pub theta0: f64,
    pub theta1: f64,
    #[serde(default)]
    pub nonlinear: Vec<f64>,
}

impl DoseResponseModel {
    pub fn new(shape: Shape, theta0: f64, theta1: f64, nonlinear: Vec<f64>) -> Result<Self> {
        shape.check_nonlinear(&nonlinear)?;
        if !(theta0.is_finite() && theta1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "linear parameters must be finite: ({theta0}, {theta1})"
            )));
        }
        Ok(Self {
            shape,
            theta0,
            theta1,
            nonlinear,
        })
    }

    pub fn emax(e0: f64, emax: f64, ed50: f64) -> Result<Self> {
        Self::new(Shape::Emax, e0, emax, vec![ed50])
    }

    pub fn logistic(e0: f64, emax: f64, ed50: f64, delta: f64) -> Result<Self> {
        Self::new(Shape::Logistic, e0, emax, vec![ed50, delta])
    }

    pub fn scaled_beta(e0: f64, emax: f64, a: f64, b: f64, scale: f64) -> Result<Self> {
        Self::new(Shape::ScaledBeta { scale }, e0, emax, vec![a, b])
    }

    pub fn linear(e0: f64, slope: f64) -> Result<Self> {
        Self::new(Shape::Linear, e0, slope, vec![])
    }

    pub fn n_params(&self) -> usize {
        self.shape.n_params()
    }

    /// Full parameter vector `(θ₀, θ₁, θ⁰...)`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.n_params());
        t.push(self.theta0);
        t.push(self.theta1);
        t.extend_from_slice(&self.nonlinear);
        t
    }

    /// Rebuilds a model of the same shape from a full parameter vector.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        Self::new(self.shape, theta[0], theta[1], theta[2..].to_vec())
    }

    pub fn eval_shape(&self, d: f64) -> Result<f64> {
        self.shape.check_dose(d)?;
        Ok(self.shape.f0(&self.nonlinear, d))
    }

    pub fn eval_mean(&self, d: f64) -> Result<f64> {
        Ok(self.theta0 + self.theta1 * self.eval_shape(d)?)
    }

    /// `∂f/∂θ = (1, f⁰, θ₁·∂f⁰/∂θ⁰)`.
    pub fn gradient(&self, d: f64) -> Result<Vec<f64>> {
        self.shape.check_dose(d)?;
        Ok(self.gradient_unchecked(d))
    }

    pub(crate) fn gradient_unchecked(&self, d: f64) -> Vec<f64> {
        let nl = &self.nonlinear;
        let mut g = Vec::with_capacity(self.n_params());
        g.push(1.0);
        g.push(self.shape.f0(nl, d));
        let partials = self.shape.f0_partials(nl, d);
        g.extend(partials[..nl.len()].iter().map(|p| self.theta1 * p));
        g
    }

    /// Minimum effective dose: the smallest dose in `(lo, hi]` whose mean
    /// exceeds the placebo mean by `delta`.
    pub fn med(&self, spec: &MedSpec) -> Option<f64> {
        if self.theta1 <= 0.0 {
            return None;
        }
        let nl = &self.nonlinear;
        let lo = spec.placebo_dose;
        let hi = spec.max_dose.min(self.shape.max_dose());
        let level = self.shape.f0(nl, lo) + spec.delta / self.theta1;
        let med = self.shape.inverse(nl, level, lo, hi)?;
        (med > lo).then_some(med)
    }

    /// Gradient of the MED functional `b(θ)` by implicit differentiation of
    /// `θ₁(f⁰(b) − f⁰(lo)) = Δ`.
    pub fn med_gradient(&self, spec: &MedSpec) -> Result<Vec<f64>> {
        let b = self
            .med(spec)
            .ok_or_else(|| Error::NonDifferentiable("MED does not exist".into()))?;
        if b >= spec.max_dose {
            return Err(Error::NonDifferentiable(format!(
                "MED {b} sits on the upper end of the dose range"
            )));
        }
        let nl = &self.nonlinear;
        let slope = self.shape.f0_slope(nl, b);
        if !(slope > 0.0) || !slope.is_finite() {
            return Err(Error::NonDifferentiable(format!(
                "shape is not strictly increasing through the MED (slope {slope})"
            )));
        }
        let lo = spec.placebo_dose;
        let at_med = self.shape.f0_partials(nl, b);
        let at_lo = self.shape.f0_partials(nl, lo);
        let mut grad = Vec::with_capacity(self.n_params());
        grad.push(0.0);
        grad.push(-spec.delta / (self.theta1 * self.theta1 * slope));
        for j in 0..nl.len() {
            grad.push(-(at_med[j] - at_lo[j]) / slope);
        }
        Ok(grad)
    }
}

/// Clinical relevance threshold and the dose range the MED is sought in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedSpec {
    pub delta: f64,
    pub placebo_dose: f64,
    pub max_dose: f64,
}

impl MedSpec {
    pub fn new(delta: f64, placebo_dose: f64, max_dose: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "relevance threshold must be positive, got {delta}"
            )));
        }
        if !(max_dose > placebo_dose && placebo_dose >= 0.0 && max_dose.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "empty dose range ({placebo_dose}, {max_dose}]"
            )));
        }
        Ok(Self {
            delta,
            placebo_dose,
            max_dose,
        })
    }
}

/// Box constraint on the nonlinear parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidParameter(
                "bounds have mismatched lengths".into(),
            ));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidParameter(format!(
                    "bad bound pair [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Strict interior membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l < v && v < u)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }
}
