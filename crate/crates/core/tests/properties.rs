use dosefind::design::{
    compound_criterion, prune_weights, round_allocation, AllocationState, CompoundCriterionInput,
    CriterionTerm, Design,
};
use dosefind::inference::{glp_grid, integrated_likelihood, Dataset, NigPrior};
use dosefind::optim::{angles_to_simplex, simplex_to_angles};
use dosefind::simulator::{asthma_med_spec, cohort_sizes};
use dosefind::{DoseResponseModel, Shape};
use proptest::prelude::*;

const DOSES: [f64; 5] = [0.0, 5.0, 12.5, 25.0, 50.0];

fn weights(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, k).prop_filter_map("positive total", |v| {
        let t: f64 = v.iter().sum();
        (t > 1e-6).then(|| v.iter().map(|x| x / t).collect())
    })
}

fn emax() -> impl Strategy<Value = DoseResponseModel> {
    (0.0..200.0f64, 250.0..800.0f64, 1.0..40.0f64)
        .prop_map(|(a, b, c)| DoseResponseModel::emax(a, b, c).unwrap())
}

proptest! {
    #[test]
    fn rounding_conserves_patients_and_support(w in weights(6), extra in 0usize..200) {
        let support = w.iter().filter(|v| **v > 0.0).count();
        let n = support + extra;
        let alloc = round_allocation(&w, n).unwrap();
        prop_assert_eq!(alloc.iter().sum::<usize>(), n);
        for (wi, ni) in w.iter().zip(&alloc) {
            prop_assert_eq!(*wi > 0.0, *ni > 0);
        }
        // apportionment stays within the support size of the exact quotas
        for (wi, &ni) in w.iter().zip(&alloc) {
            prop_assert!((ni as f64 - n as f64 * wi).abs() <= support as f64);
        }
    }

    #[test]
    fn pruned_weights_stay_on_the_simplex(w in weights(7), tol in 0.0..0.2f64) {
        prop_assume!(w.iter().any(|v| *v >= tol));
        let p = prune_weights(&w, tol);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v == 0.0 || *v >= tol));
    }

    #[test]
    fn simplex_map_roundtrips(w in weights(5)) {
        let z = simplex_to_angles(&w);
        let mut back = vec![0.0; 5];
        angles_to_simplex(&z, &mut back);
        for (a, b) in w.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn any_angles_give_a_distribution(z in prop::collection::vec(-10.0..10.0f64, 4)) {
        let mut w = vec![0.0; 5];
        angles_to_simplex(&z, &mut w);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combined_allocation_is_a_distribution(
        n_old in prop::collection::vec(0usize..30, 5),
        n_next in 1usize..100,
        w in weights(5),
    ) {
        let alloc = AllocationState::new(n_old.clone(), n_next).unwrap();
        let c = alloc.combine(&w);
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let total = (n_old.iter().sum::<usize>() + n_next) as f64;
        for i in 0..5 {
            prop_assert!((c[i] * total - n_old[i] as f64 - n_next as f64 * w[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn likelihood_ignores_observation_order(
        ys in prop::collection::vec(-500.0..800.0f64, 10),
        ed50 in 0.5..60.0f64,
        rot in 0usize..10,
    ) {
        let prior = NigPrior::new([100.0, 300.0], [[0.5, 0.0], [0.0, 0.8]], 6.0 * 350.0 * 350.0, 4.0).unwrap();
        let fill = |order: &[f64]| {
            let mut d = Dataset::new(DOSES.to_vec()).unwrap();
            for (i, y) in order.iter().enumerate() {
                d.push(DOSES[i % 5], *y).unwrap();
            }
            d
        };
        // rotating by a multiple of 5 keeps every response on its dose
        let mut shuffled = ys.clone();
        shuffled.rotate_left(5 * (rot % 2));
        let a = integrated_likelihood(&fill(&ys), Shape::Emax, &[ed50], &prior).unwrap();
        let b = integrated_likelihood(&fill(&shuffled), Shape::Emax, &[ed50], &prior).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn med_ignores_placebo_level(m in emax(), shift in -100.0..100.0f64) {
        let spec = asthma_med_spec();
        let t = m.theta();
        let moved = DoseResponseModel::emax(t[0] + shift, t[1], t[2]).unwrap();
        match (m.med(&spec), moved.med(&spec)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
            (None, None) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn criterion_shifts_by_log_sigma_scale(m in emax(), w in weights(5), k in 0.1..10.0f64) {
        let spec = asthma_med_spec();
        prop_assume!(m.med_gradient(&spec).is_ok());
        let term = vec![CriterionTerm { model: m, spec, alpha: 1.0 }];
        let design = Design::new(DOSES.to_vec(), w).unwrap();
        let base = CompoundCriterionInput::new(term.clone(), 350.0 * 350.0, 250.0).unwrap();
        let scaled = CompoundCriterionInput::new(term, k * 350.0 * 350.0, 250.0).unwrap();
        let (a, b) = (compound_criterion(&base, &design).unwrap(), compound_criterion(&scaled, &design).unwrap());
        if a.is_finite() {
            prop_assert!((b - a - k.ln()).abs() < 1e-9);
        } else {
            prop_assert!(b.is_infinite());
        }
    }

    #[test]
    fn cohorts_partition_the_sample(total in 1usize..2000, interims in 0usize..12) {
        prop_assume!(total > interims);
        let c = cohort_sizes(total, interims);
        prop_assert_eq!(c.len(), interims + 1);
        prop_assert_eq!(c.iter().sum::<usize>(), total);
        prop_assert!(c[1..].iter().all(|&x| x == c[c.len() - 1]));
        prop_assert!(c[0] - c[c.len() - 1] <= interims);
    }
}

#[test]
fn lattice_points_are_interior() {
    for (n, dim) in [(100, 1), (1597, 2), (89, 2)] {
        let g = glp_grid(n, dim).unwrap();
        assert_eq!(g.len(), n);
        assert!(g.iter().flatten().all(|u| *u > 0.0 && *u < 1.0));
    }
}
