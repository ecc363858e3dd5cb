use proptest::prelude::*;

use memip_core::basis::{bernstein_coefficients, eval_exp_sum, reconstruct, ApproxScheme};
use memip_core::eval::{auc, diff_score, trimmed};
use memip_core::features::bruteforce_event_features;
use memip_core::io::{read_events, read_model, write_events, write_model};
use memip_core::likelihood::{ExactTargetObjective, TargetObjective};
use memip_core::newton::ConcaveObjective;
use memip_core::simulate::{simulate_dataset, stream_rng, thinning_simulate};
use memip_core::{build_event_features, build_grid_features, Dataset, Event, ExpSumModel, GroundTruthModel, Realization};

fn dataset_strategy(max_d: usize, max_events: usize) -> impl Strategy<Value = Dataset> {
    (1..=max_d, 0.5f64..10.0).prop_flat_map(move |(d, len)| {
        prop::collection::vec((0.0..len, 0..d), 1..=max_events).prop_map(move |raw| {
            let mut events: Vec<Event> = raw.into_iter().map(|(t, k)| Event::new(t, k)).collect();
            events.sort_by(|a, b| a.time.total_cmp(&b.time));
            let r = Realization::new("r", 0.0, len, events).unwrap();
            Dataset::new(d, vec![r]).unwrap()
        })
    })
}

fn model_strategy(d: usize, k: usize) -> impl Strategy<Value = ExpSumModel> {
    prop::collection::vec(-1.0f64..1.0, d * (d + 1) * k)
        .prop_map(move |c| ExpSumModel::from_coeffs(d, k, 0.8, c).unwrap())
}

fn feasible_point(obj: &TargetObjective, k: usize, raw: &[f64]) -> Vec<f64> {
    // a large constant background keeps every rate positive
    (0..obj.dim())
        .map(|i| if i == 0 { 5.0 + raw[i].abs() } else if i < k { 0.1 * raw[i] } else { 0.2 * raw[i] })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn markov_features_match_bruteforce(ds in dataset_strategy(3, 40), k in 1usize..=3, alpha in 0.2f64..3.0) {
        let fast = build_event_features(&ds, k, alpha).unwrap();
        let slow = bruteforce_event_features(&ds, k, alpha).unwrap();
        for (a, b) in fast.targets.iter().zip(&slow.targets) {
            prop_assert_eq!(&a.origins, &b.origins);
            for (x, y) in a.rows.iter().zip(&b.rows) {
                prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }
        for (x, y) in fast.bhat.iter().zip(&slow.bhat) {
            prop_assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0));
        }
    }

    #[test]
    fn relaxed_objective_is_concave_and_bounds_exact(
        ds in dataset_strategy(2, 30),
        k in 1usize..=2,
        raw in prop::collection::vec(-1.0f64..1.0, 6),
        raw2 in prop::collection::vec(-1.0f64..1.0, 6),
        theta in 0.0f64..1.0,
        dt in 0.05f64..1.0,
    ) {
        let f = build_event_features(&ds, k, 1.0).unwrap();
        let grid = build_grid_features(&ds, k, 1.0, dt).unwrap();
        let v = (0..ds.d()).find(|&v| !f.targets[v].is_empty()).unwrap();
        let relaxed = TargetObjective::new(&f, v, k);
        let exact = ExactTargetObjective::new(&grid, &f, v, k);
        let x = feasible_point(&relaxed, k, &raw);
        let y = feasible_point(&relaxed, k, &raw2);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
        for (fx, fy, fm) in [
            (relaxed.value(&x), relaxed.value(&y), relaxed.value(&mid)),
            (exact.value(&x), exact.value(&y), exact.value(&mid)),
        ] {
            let chord = theta * fx + (1.0 - theta) * fy;
            prop_assert!(fm >= chord - 1e-9 * chord.abs().max(1.0));
        }
        for p in [&x, &y, &mid] {
            prop_assert!(exact.value(p) <= relaxed.value(p) + 1e-9);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_maps(
        pairs in prop::collection::vec((any::<bool>(), -5.0f64..5.0), 2..60),
    ) {
        let labels: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let scores: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
        let a = auc(&labels, &scores).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
        prop_assert!((auc(&labels, &mapped).unwrap() - a).abs() < 1e-12);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((auc(&flipped, &scores).unwrap() + a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_is_linear(
        m1 in model_strategy(2, 3),
        m2 in model_strategy(2, 3),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        t in 0.0f64..10.0,
    ) {
        let c: Vec<f64> = m1.coeffs().iter().zip(m2.coeffs()).map(|(x, y)| a * x + b * y).collect();
        let m = ExpSumModel::from_coeffs(2, 3, 0.8, c).unwrap();
        for v in 0..2 {
            for u in 0..3 {
                let lhs = reconstruct(&m, v, u, t);
                let rhs = a * reconstruct(&m1, v, u, t) + b * reconstruct(&m2, v, u, t);
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn approximation_is_linear_in_the_target(
        p in -2.0f64..2.0,
        q in -2.0f64..2.0,
        k in 1usize..=12,
        chebyshev in any::<bool>(),
    ) {
        let scheme = if chebyshev { ApproxScheme::Chebyshev } else { ApproxScheme::BernsteinOperator };
        let f = |t: f64| (-t).exp() * t.cos();
        let g = |t: f64| 1.0 / (1.0 + t);
        let cf = bernstein_coefficients(f, k, 0.5, 10.0, scheme).unwrap();
        let cg = bernstein_coefficients(g, k, 0.5, 10.0, scheme).unwrap();
        let ch = bernstein_coefficients(|t| p * f(t) + q * g(t), k, 0.5, 10.0, scheme).unwrap();
        for t in [0.0, 0.7, 3.0, 9.5] {
            let lhs = eval_exp_sum(&ch, 0.5, t);
            let rhs = p * eval_exp_sum(&cf, 0.5, t) + q * eval_exp_sum(&cg, 0.5, t);
            prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn diff_is_symmetric_and_bounded(m1 in model_strategy(2, 2), m2 in model_strategy(2, 2)) {
        let d12 = diff_score(&GroundTruthModel::from_expsum(&m1), &m2, 10.0, 501).unwrap();
        let d21 = diff_score(&GroundTruthModel::from_expsum(&m2), &m1, 10.0, 501).unwrap();
        prop_assert!((d12 - d21).abs() < 1e-12);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&d12));
        prop_assert!(diff_score(&GroundTruthModel::from_expsum(&m1), &m1, 10.0, 501).unwrap() < 1e-15);
    }

    #[test]
    fn trimmed_mean_within_kept_range(values in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let t = trimmed(&values).unwrap();
        prop_assert!(t.low <= t.mean + 1e-9 && t.mean <= t.high + 1e-9);
        prop_assert_eq!(t.kept, if values.len() >= 3 { values.len() - 2 } else { values.len() });
    }

    #[test]
    fn events_round_trip(ds in dataset_strategy(4, 30)) {
        let back = read_events(&write_events(&ds).unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn model_round_trip(m in model_strategy(3, 2)) {
        prop_assert_eq!(read_model(&write_model(&m)).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn thinning_output_is_sorted_inside_window(m in model_strategy(2, 2), seed in 0u64..1000) {
        // keep the process stable: positive backgrounds, damped kernels
        let mut m = m;
        for v in 0..2 {
            m.set(v, 0, 0, m.get(v, 0, 0).abs() + 0.1);
            for u in 1..3 {
                for j in 0..2 {
                    m.set(v, u, j, 0.2 * m.get(v, u, j));
                }
            }
        }
        let mut rng = stream_rng(seed, 1);
        let r = thinning_simulate(&m, "x", 1.0, 11.0, &mut rng).unwrap();
        prop_assert!(r.events.windows(2).all(|w| w[0].time <= w[1].time));
        prop_assert!(r.events.iter().all(|e| e.time > 1.0 && e.time < 11.0 && e.kind < 2));
        let again = thinning_simulate(&m, "x", 1.0, 11.0, &mut stream_rng(seed, 1)).unwrap();
        prop_assert_eq!(again, r);
    }
}

#[test]
fn simulation_is_independent_of_thread_count() {
    let m = ExpSumModel::from_coeffs(1, 1, 1.0, vec![1.0, 0.5]).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| simulate_dataset(&m, 50, 0.0, 10.0, 3).unwrap());
    let b = four.install(|| simulate_dataset(&m, 50, 0.0, 10.0, 3).unwrap());
    assert_eq!(a, b);
}
