use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use memip_core::likelihood::TargetObjective;
use memip_core::memip::{fit_exp_baseline, memip_fit_features, select_k, uniform_start};
use memip_core::newton::{newton_argmax, ConcaveObjective, NewtonParams};
use memip_core::simulate::simulate_dataset;
use memip_core::{build_event_features, memip_fit, Dataset, ExpSumModel, FitOptions};

fn two_type_model() -> ExpSumModel {
    let mut m = ExpSumModel::zeros(2, 2, 1.0).unwrap();
    m.set(0, 0, 0, 0.8);
    m.set(1, 0, 0, 0.6);
    for (v, s, j, x) in [(0, 0, 0, 0.5), (0, 0, 1, -0.3), (0, 1, 0, 0.25), (1, 0, 1, 0.4), (1, 1, 0, -0.4), (1, 1, 1, 0.2)] {
        m.set(v, s + 1, j, x);
    }
    m
}

#[test]
fn k1_fit_coincides_with_exp_baseline() {
    let ds = simulate_dataset(&two_type_model(), 200, 0.0, 30.0, 1).unwrap();
    let fit = memip_fit(&ds, &FitOptions::new(1.0, 3)).unwrap();
    let exp = fit_exp_baseline(&ds, 1.0, NewtonParams::default()).unwrap();
    for (a, b) in fit.model(1).coeffs().iter().zip(exp.coeffs()) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn targets_fit_independently_of_thread_count() {
    let ds = simulate_dataset(&two_type_model(), 200, 0.0, 30.0, 2).unwrap();
    let f = build_event_features(&ds, 3, 1.0).unwrap();
    let opts = FitOptions::new(1.0, 3);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| memip_fit_features(&f, &opts).unwrap());
    let b = four.install(|| memip_fit_features(&f, &opts).unwrap());
    assert_eq!(a.models, b.models);
}

/// Random single-target instance and a feasible start inside it.
fn instance(seed: u64) -> (TargetObjective, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ExpSumModel::zeros(2, 2, 1.0).unwrap();
    m.set(0, 0, 0, rng.gen_range(0.3..1.0));
    m.set(1, 0, 0, rng.gen_range(0.3..1.0));
    for v in 0..2 {
        for u in 1..3 {
            m.set(v, u, 0, rng.gen_range(0.0..0.4));
        }
    }
    let ds = simulate_dataset(&m, 100, 0.0, 30.0, seed).unwrap();
    let f = build_event_features(&ds, 2, 1.0).unwrap();
    let obj = TargetObjective::new(&f, 0, 2);
    let x0 = uniform_start(&obj);
    (obj, x0)
}

#[test]
fn newton_iterations_follow_the_self_concordant_bound() {
    let params = NewtonParams::default();
    let loglog = (1.0 / params.decrement_tol).log2().log2();
    let run = |seed| {
        let (obj, x0) = instance(seed);
        let r = newton_argmax(&obj, &x0, &params).unwrap();
        (r.iterations as f64, r.value - obj.value(&x0))
    };
    // calibrate C on one family of seeds, check on another
    let c = (0..10)
        .map(run)
        .map(|(it, gap)| ((it - loglog - 5.0) / gap).max(0.0))
        .fold(0.0, f64::max);
    for seed in 100..130 {
        let (it, gap) = run(seed);
        assert!(it <= c * gap + loglog + 5.0, "seed {seed}: {it} iterations, gap {gap}, C {c}");
    }
}

#[test]
fn validation_selects_the_true_basis_size() {
    let truth = two_type_model();
    let mut correct = 0;
    for seed in 0..10 {
        let train = simulate_dataset(&truth, 1_000, 0.0, 50.0, seed).unwrap();
        let validation = simulate_dataset(&truth, 1_000, 0.0, 50.0, 1_000 + seed).unwrap();
        assert!(train.total_events() >= 100_000 / 2);
        let fit = memip_fit(&train, &FitOptions::new(1.0, 4)).unwrap();
        let (k, _) = select_k(&fit.models, &validation).unwrap();
        if k == 2 {
            correct += 1;
        }
    }
    assert!(correct >= 8, "true k selected in {correct}/10 seeds");
}

#[test]
fn select_k_rejects_empty_validation() {
    let ds = simulate_dataset(&two_type_model(), 20, 0.0, 10.0, 3).unwrap();
    let fit = memip_fit(&ds, &FitOptions::new(1.0, 2)).unwrap();
    let empty = Dataset::new(2, vec![]).unwrap();
    assert!(select_k(&fit.models, &empty).is_err());
}
