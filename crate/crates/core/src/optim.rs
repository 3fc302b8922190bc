//! Derivative-free minimization and the angle parameterization of the
//! probability simplex.

/// Nelder–Mead settings.
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once `max f − min f` over the simplex drops below this.
    pub f_tol: f64,
    /// ... and the simplex has collapsed below this (∞-norm) size.
    pub x_tol: f64,
    /// Edge length of the initial simplex, per coordinate.
    pub step: f64,
    /// Fresh simplices built around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 5000,
            f_tol: 1e-9,
            x_tol: f64::INFINITY,
            step: 0.5,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl NelderMead {
    pub fn minimize<F>(&self, mut f: F, x0: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut best = self.run(&mut f, x0, self.max_evals);
        let mut evals = best.evals;
        for _ in 0..self.restarts {
            if evals >= self.max_evals {
                break;
            }
            let again = self.run(&mut f, &best.x, self.max_evals - evals);
            evals += again.evals;
            let improved = best.f - again.f;
            let converged = again.converged;
            if again.f <= best.f {
                best = again;
            }
            best.converged = converged;
            if !(improved > self.f_tol) {
                break;
            }
        }
        best.evals = evals;
        best
    }

    fn run<F>(&self, f: &mut F, x0: &[f64], budget: usize) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            sanitize(f(x))
        };
        if n == 0 {
            let v = eval(x0, &mut evals);
            return Minimum {
                x: vec![],
                f: v,
                evals,
                converged: true,
            };
        }
        let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
        pts.push(x0.to_vec());
        vals.push(eval(x0, &mut evals));
        for i in 0..n {
            let mut p = x0.to_vec();
            p[i] += self.step;
            vals.push(eval(&p, &mut evals));
            pts.push(p);
        }
        let mut order: Vec<usize> = (0..=n).collect();
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];
        let mut converged = false;
        while evals < budget {
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            let (ib, iw, isw) = (order[0], order[n], order[n - 1]);
            let spread = vals[iw] - vals[ib];
            let size = pts
                .iter()
                .flat_map(|p| p.iter().zip(&pts[ib]).map(|(a, b)| (a - b).abs()))
                .fold(0.0_f64, f64::max);
            if (spread <= self.f_tol || (vals[iw].is_infinite() && vals[ib].is_infinite()))
                && size <= self.x_tol
            {
                converged = spread <= self.f_tol;
                break;
            }
            if size == 0.0 {
                break;
            }
            centroid.iter_mut().for_each(|c| *c = 0.0);
            for &k in &order[..n] {
                for (c, p) in centroid.iter_mut().zip(&pts[k]) {
                    *c += p / n as f64;
                }
            }
            // reflect
            for j in 0..n {
                trial[j] = centroid[j] + (centroid[j] - pts[iw][j]);
            }
            let fr = eval(&trial, &mut evals);
            if fr < vals[ib] {
                // expand
                for j in 0..n {
                    trial2[j] = centroid[j] + 2.0 * (centroid[j] - pts[iw][j]);
                }
                let fe = eval(&trial2, &mut evals);
                if fe < fr {
                    pts[iw].copy_from_slice(&trial2);
                    vals[iw] = fe;
                } else {
                    pts[iw].copy_from_slice(&trial);
                    vals[iw] = fr;
                }
                continue;
            }
            if fr < vals[isw] {
                pts[iw].copy_from_slice(&trial);
                vals[iw] = fr;
                continue;
            }
            // contract, outside or inside
            let outside = fr < vals[iw];
            for j in 0..n {
                trial2[j] = if outside {
                    centroid[j] + 0.5 * (trial[j] - centroid[j])
                } else {
                    centroid[j] + 0.5 * (pts[iw][j] - centroid[j])
                };
            }
            let fc = eval(&trial2, &mut evals);
            if (outside && fc <= fr) || (!outside && fc < vals[iw]) {
                pts[iw].copy_from_slice(&trial2);
                vals[iw] = fc;
                continue;
            }
            // shrink toward the best vertex
            let xb = pts[ib].clone();
            for k in 0..=n {
                if k == ib {
                    continue;
                }
                for j in 0..n {
                    pts[k][j] = xb[j] + 0.5 * (pts[k][j] - xb[j]);
                }
                vals[k] = eval(&pts[k], &mut evals);
            }
        }
        let ib = (0..=n)
            .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
            .unwrap_or(0);
        Minimum {
            x: pts[ib].clone(),
            f: vals[ib],
            evals,
            converged,
        }
    }
}

/// Minimizes `f` over a box by running Nelder–Mead on clamped coordinates.
/// The returned point lies inside the box.
pub fn minimize_in_box<F>(
    nm: &NelderMead,
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let clamp = |x: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend(
            x.iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u)),
        );
    };
    let mut buf = Vec::with_capacity(x0.len());
    let mut res = nm.minimize(
        |x| {
            clamp(x, &mut buf);
            f(&buf)
        },
        x0,
    );
    let mut out = Vec::new();
    clamp(&res.x, &mut out);
    res.x = out;
    res
}

/// Maps angles `z ∈ ℝ^{k−1}` onto the closed simplex in `ℝ^k`:
/// `w₁ = sin²z₁`, `wᵢ = cos²z₁⋯cos²zᵢ₋₁ sin²zᵢ`, `w_k = ∏ cos²zⱼ`.
pub fn angles_to_simplex(z: &[f64], w: &mut [f64]) {
    debug_assert_eq!(w.len(), z.len() + 1);
    let mut rest = 1.0;
    for (i, zi) in z.iter().enumerate() {
        let s = zi.sin();
        let s2 = s * s;
        w[i] = rest * s2;
        rest *= 1.0 - s2;
    }
    w[z.len()] = rest;
}

/// Inverse of [`angles_to_simplex`] (one preimage, angles in `[0, π/2]`).
pub fn simplex_to_angles(w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let mut z = Vec::with_capacity(k.saturating_sub(1));
    let mut rest: f64 = w.iter().sum();
    for wi in &w[..k.saturating_sub(1)] {
        let frac = if rest > 0.0 {
            (wi / rest).clamp(0.0, 1.0)
        } else {
            0.0
        };
        z.push(frac.sqrt().asin());
        rest -= wi;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let nm = NelderMead {
            max_evals: 20_000,
            f_tol: 1e-16,
            x_tol: 1e-10,
            step: 0.5,
            restarts: 2,
        };
        let r = nm.minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn one_dimensional_and_boxed() {
        let nm = NelderMead {
            f_tol: 1e-14,
            x_tol: 1e-10,
            ..NelderMead::default()
        };
        let r = minimize_in_box(&nm, |x| (x[0] - 3.0).powi(2), &[0.5], &[0.0], &[2.0]);
        assert_eq!(r.x, vec![2.0]);
        let r = nm.minimize(|x| (x[0] - 3.0).powi(2), &[0.0]);
        assert!((r.x[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn infinite_regions_do_not_trap() {
        let nm = NelderMead::default();
        let r = nm.minimize(
            |x| {
                if x[0] < 0.0 {
                    f64::NAN
                } else {
                    (x[0] - 1.0).powi(2)
                }
            },
            &[0.2],
        );
        assert!((r.x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn simplex_map_roundtrip() {
        let w = [0.35, 0.03, 0.22, 0.35, 0.05];
        let z = simplex_to_angles(&w);
        let mut back = [0.0; 5];
        angles_to_simplex(&z, &mut back);
        for (a, b) in w.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut v = [0.0; 4];
        angles_to_simplex(&[1.3, -7.0, 100.0], &mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(v.iter().all(|x| *x >= 0.0));
    }
}
