//! Library results checked against independent computations.

mod common;

use dosefind::design::{med_variance, round_allocation, Design, MedVariance};
use dosefind::fitting::{final_med, fit_model, profiled_rss, FitSettings, DEFAULT_ALPHA};
use dosefind::inference::{glp_grid, shrinkage_estimate, Dataset, InferenceSettings};
use dosefind::simulator::{asthma_candidates, asthma_med_spec, truths, DoseOption};
use dosefind::{DoseResponseModel, ParameterBounds, Shape};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn truth(name: &str) -> DoseResponseModel {
    truths().into_iter().find(|(n, _)| *n == name).unwrap().1
}

fn noisy_data(
    model: &DoseResponseModel,
    doses: &[f64],
    per_dose: usize,
    sigma: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::new(doses.to_vec()).unwrap();
    for &d in doses {
        for _ in 0..per_dose {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(d, model.eval_mean(d).unwrap() + sigma * z)
                .unwrap();
        }
    }
    data
}

/// Least squares on the raw observations with the full design `[1, f⁰(x)]`.
fn joint_rss(data: &Dataset, shape: Shape, nl: &[f64]) -> f64 {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, &d) in data.doses().iter().enumerate() {
        for &r in data.responses(i) {
            rows.push([1.0, shape.f0(nl, d)]);
            y.push(r);
        }
    }
    let x = DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]);
    let y = DVector::from_vec(y);
    let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    (y - x * beta).norm_squared()
}

#[test]
fn profiled_rss_matches_joint_least_squares() {
    let doses = DoseOption::Seven.doses();
    let cases: [(Shape, Vec<f64>); 4] = [
        (Shape::Emax, vec![7.3]),
        (Shape::Logistic, vec![22.0, 4.1]),
        (Shape::ScaledBeta { scale: 60.0 }, vec![0.6, 1.3]),
        (Shape::Linear, vec![]),
    ];
    for (k, (shape, nl)) in cases.iter().enumerate() {
        let data = noisy_data(&truth("emax1"), &doses, 5, 300.0, k as u64);
        let got = profiled_rss(&data, *shape, nl).unwrap();
        let want = joint_rss(&data, *shape, nl);
        assert!(
            (got - want).abs() <= 1e-9 * want,
            "{shape:?}: {got} vs {want}"
        );
    }
}

#[test]
fn fit_dominates_truth_and_every_start_point() {
    let doses = DoseOption::Seven.doses();
    for (seed, name) in ["emax2", "logistic1", "beta"].into_iter().enumerate() {
        let model = truth(name);
        let data = noisy_data(&model, &doses, 6, 350.0, 100 + seed as u64);
        let shape = model.shape;
        let bounds = match shape {
            Shape::Emax => ParameterBounds::new(vec![0.05], vec![75.0]),
            Shape::Logistic => ParameterBounds::new(vec![0.05, 0.5], vec![75.0, 25.0]),
            _ => ParameterBounds::new(vec![0.05, 0.05], vec![4.0, 4.0]),
        }
        .unwrap();
        let fit = fit_model(&data, shape, &bounds, &FitSettings::default()).unwrap();
        assert!(bounds.contains(&fit.model.nonlinear));
        let at_truth = joint_rss(&data, shape, &model.nonlinear);
        assert!(
            fit.rss <= at_truth * (1.0 + 1e-12),
            "{name}: {} > {at_truth}",
            fit.rss
        );
        let n = if bounds.len() == 1 { 100 } else { 1597 };
        for u in glp_grid(n, bounds.len()).unwrap() {
            let start = profiled_rss(&data, shape, &bounds.from_unit(&u)).unwrap();
            assert!(fit.rss <= start * (1.0 + 1e-12));
        }
    }
}

#[test]
fn noiseless_emax_data_recovers_the_med() {
    let model = truth("emax2");
    let doses = DoseOption::Seven.doses();
    let mut data = Dataset::new(doses.clone()).unwrap();
    // symmetric offsets keep the dose means exact while giving σ̂ > 0
    for &d in &doses {
        for e in [-20.0, 20.0, -10.0, 10.0] {
            data.push(d, model.eval_mean(d).unwrap() + e).unwrap();
        }
    }
    let out = final_med(
        &data,
        &asthma_candidates(),
        &asthma_med_spec(),
        DEFAULT_ALPHA,
        &FitSettings::default(),
    );
    let med = out.med.expect("MED estimated");
    assert!((med - 7.69).abs() <= 0.01, "{med}");
    assert!(out.selected.unwrap().starts_with("emax"));
}

#[test]
fn shrinkage_estimate_concentrates_on_truth() {
    let model = truth("emax1");
    let data = noisy_data(&model, &DoseOption::Seven.doses(), 400, 50.0, 7);
    let cands = asthma_candidates();
    let emax1 = cands.models.iter().find(|m| m.name == "emax1").unwrap();
    let est = shrinkage_estimate(&data, emax1, &InferenceSettings::default()).unwrap();
    let (t, e) = (model.theta(), est.theta());
    assert!((e[2] - t[2]).abs() < 1.0, "{e:?} vs {t:?}");
    assert!(
        (e[0] - t[0]).abs() < 10.0 && (e[1] - t[1]).abs() < 20.0,
        "{e:?}"
    );
}

#[test]
fn med_variance_matches_finite_difference_delta_method() {
    let spec = asthma_med_spec();
    let design = Design::normalized(
        DoseOption::Seven.doses(),
        vec![3.0, 1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 1.0],
    )
    .unwrap();
    for (name, model) in truths() {
        let Some(_) = model.med(&spec) else { continue };
        let theta = model.theta();
        let p = theta.len();
        let mean_at = |th: &[f64], d: f64| model.with_theta(th).unwrap().eval_mean(d).unwrap();
        let mut m = DMatrix::zeros(p, p);
        for (&d, &w) in design.doses().iter().zip(design.weights()) {
            let g = DVector::from_fn(p, |j, _| {
                common::richardson_diff(|th| mean_at(th, d), &theta, j)
            });
            m += w * &g * g.transpose();
        }
        let c = DVector::from_fn(p, |j, _| {
            common::richardson_diff(
                |th| model.with_theta(th).unwrap().med(&spec).unwrap(),
                &theta,
                j,
            )
        });
        let want = 350.0f64.powi(2) / 250.0 * (c.transpose() * m.try_inverse().unwrap() * c)[0];
        let got = match med_variance(&model, &spec, &design, 350.0f64.powi(2), 250.0).unwrap() {
            MedVariance::Estimable(v) => v,
            MedVariance::NonEstimable => panic!("{name} not estimable"),
        };
        assert!((got - want).abs() <= 1e-5 * want, "{name}: {got} vs {want}");
    }
}

/// All allocations of `n` patients to the support of `w` with at least one
/// patient per support point, scored by `min nᵢ / (n wᵢ)`.
fn best_min_ratio(w: &[f64], n: usize) -> f64 {
    fn rec(w: &[f64], i: usize, left: usize, n: usize, cur: f64, best: &mut f64) {
        if i == w.len() {
            if left == 0 {
                *best = best.max(cur);
            }
            return;
        }
        if w[i] == 0.0 {
            return rec(w, i + 1, left, n, cur, best);
        }
        for ni in 1..=left {
            let r = ni as f64 / (n as f64 * w[i]);
            rec(w, i + 1, left - ni, n, cur.min(r), best);
        }
    }
    let mut best = 0.0;
    rec(w, 0, n, n, f64::INFINITY, &mut best);
    best
}

#[test]
fn rounding_maximizes_the_smallest_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let k = rng.random_range(1..=5);
        let mut w: Vec<f64> = (0..k)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.01..1.0)
                }
            })
            .collect();
        if w.iter().all(|v| *v == 0.0) {
            w[0] = 1.0;
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let support = w.iter().filter(|v| **v > 0.0).count();
        let n = rng.random_range(support..=14);
        let alloc = round_allocation(&w, n).unwrap();
        let got = w
            .iter()
            .zip(&alloc)
            .filter(|(wi, _)| **wi > 0.0)
            .map(|(wi, &ni)| ni as f64 / (n as f64 * wi))
            .fold(f64::INFINITY, f64::min);
        let want = best_min_ratio(&w, n);
        assert!(
            (got - want).abs() <= 1e-12,
            "w={w:?} n={n}: {alloc:?} ratio {got} vs {want}"
        );
    }
}
