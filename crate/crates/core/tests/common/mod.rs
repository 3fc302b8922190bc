//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use dosefind::inference::NigPrior;
use nalgebra::{Matrix2, Vector2};
use statrs::function::gamma::ln_gamma;

/// Gauss–Legendre nodes and weights on [-1, 1] via Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Composite Gauss–Legendre abscissas/weights on [lo, hi].
pub fn composite_gl(lo: f64, hi: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let a = lo + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((a + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

/// `log ∫∫ ∏ N(yᵢ; θ₀ + θ₁xᵢ, σ²) · N(θ; μ, σ²V) · IG(σ²; ν/2, a/2) dθ dσ²`
/// by tensor-product quadrature. The grid is centred on the conditional
/// mode of θ and the mode of log σ² but the integrand is evaluated from the
/// raw densities.
pub fn brute_force_log_marginal(x: &[f64], y: &[f64], prior: &NigPrior) -> f64 {
    let v = Matrix2::new(prior.v[0][0], prior.v[0][1], prior.v[1][0], prior.v[1][1]);
    let vinv = v.try_inverse().expect("V invertible");
    let mu = Vector2::new(prior.mu[0], prior.mu[1]);
    let mut p = vinv;
    let mut r = vinv * mu;
    for (&xi, &yi) in x.iter().zip(y) {
        let g = Vector2::new(1.0, xi);
        p += g * g.transpose();
        r += g * yi;
    }
    let pinv = p.try_inverse().expect("P invertible");
    let mu_n = pinv * r;
    let chol = pinv.cholesky().expect("spd").l();
    let resid: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - mu_n[0] - mu_n[1] * xi).powi(2))
        .sum();
    let dm = mu_n - mu;
    let a_n = prior.a + resid + (dm.transpose() * vinv * dm)[0];
    let nu_n = prior.nu + x.len() as f64;
    let t0 = (a_n / (nu_n + 2.0)).ln();
    let log_det_v = v.determinant().ln();
    let log_det_l = chol.determinant().ln();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    let log_integrand = |t: f64, z0: f64, z1: f64| -> f64 {
        let s2 = t.exp();
        let th = mu_n + s2.sqrt() * (chol * Vector2::new(z0, z1));
        let mut ll = 0.0;
        for (&xi, &yi) in x.iter().zip(y) {
            let e = yi - th[0] - th[1] * xi;
            ll += -0.5 * (ln2pi + t) - e * e / (2.0 * s2);
        }
        let d = th - mu;
        let q = (d.transpose() * vinv * d)[0];
        let log_normal = -ln2pi - t - 0.5 * log_det_v - q / (2.0 * s2);
        let (sh, sc) = (prior.nu / 2.0, prior.a / 2.0);
        let log_ig = sh * sc.ln() - ln_gamma(sh) - (sh + 1.0) * t - sc / s2;
        // dθ = σ² |L| dz,  dσ² = σ² dt
        ll + log_normal + log_ig + t + log_det_l + t
    };
    let reference = log_integrand(t0, 0.0, 0.0);
    let t_nodes = composite_gl(t0 - 14.0, t0 + 14.0, 56, 10);
    let z_nodes = composite_gl(-9.0, 9.0, 12, 10);
    let mut total = 0.0;
    for &(t, wt) in &t_nodes {
        let mut inner = 0.0;
        for &(z0, w0) in &z_nodes {
            for &(z1, w1) in &z_nodes {
                inner += w0 * w1 * (log_integrand(t, z0, z1) - reference).exp();
            }
        }
        total += wt * inner;
    }
    reference + total.ln()
}

/// Adaptive Simpson quadrature of `f` on [a, b] to relative tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    // a coarse pass fixes the absolute tolerance
    let panels = 64;
    let h = (b - a) / panels as f64;
    let mut coarse = 0.0;
    for i in 0..panels {
        let (l, r) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        coarse += h / 6.0 * (f(l) + 4.0 * f(0.5 * (l + r)) + f(r));
    }
    let abs_tol = tol * coarse.abs().max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    for i in 0..panels {
        let (l, r) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let (fl, fm, fr) = (f(l), f(0.5 * (l + r)), f(r));
        let whole = h / 6.0 * (fl + 4.0 * fm + fr);
        total += rec(f, l, r, fl, fm, fr, whole, abs_tol / panels as f64, 40);
    }
    total
}

/// Every point of the simplex lattice `{w : wᵢ ∈ step·ℕ, Σw = 1}` in `k`
/// dimensions.
pub fn simplex_lattice(k: usize, parts: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / parts as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(k, left - c, parts, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, parts, parts, &mut Vec::new(), &mut out);
    out
}

/// Central finite difference of a scalar function of a vector.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], j: usize) -> f64 {
    let h = 1e-5 * x[j].abs().max(1e-2);
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[j] += h;
    xm[j] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Richardson-extrapolated central difference (error O(h⁴)).
pub fn richardson_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], j: usize) -> f64 {
    let h = 1e-3 * x[j].abs().max(1e-2);
    let d = |h: f64| {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    };
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Nonparametric bootstrap percentile interval for the mean.
pub fn bootstrap_mean_ci(values: &[f64], level: f64, reps: usize, seed: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..reps)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let lo = ((1.0 - level) / 2.0 * reps as f64).floor() as usize;
    let hi = (((1.0 + level) / 2.0) * reps as f64).ceil() as usize - 1;
    (means[lo], means[hi.min(reps - 1)])
}
