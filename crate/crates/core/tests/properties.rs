use proptest::prelude::*;
use rand::Rng;

use probattn::bp::bp_objective;
use probattn::format::{model_to_text, parse_model, LoadedModel};
use probattn::numeric::max_abs_diff;
use probattn::oracle::{naive_mixture_eval, random_model, random_vec, rng};
use probattn::suite::same_bits;
use probattn::*;

fn dims(seed: u64) -> (rand_chacha::ChaCha8Rng, usize, usize, usize) {
    let mut r = rng(seed);
    let n = r.random_range(1..=6);
    let d = r.random_range(1..=3);
    let m = r.random_range(1..=3);
    (r, n, d, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn responsibilities_are_distributions(seed in any::<u64>()) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let q = random_vec(&mut r, d, 2.0);
        let v = random_vec(&mut r, m, 2.0);
        for i in 0..n {
            let row = responsibilities(&p, i, &q, &v).unwrap();
            prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_density_matches_naive_sum(seed in any::<u64>()) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let q = random_vec(&mut r, d, 1.0);
        let v = random_vec(&mut r, m, 1.0);
        for i in 0..n {
            let naive = naive_mixture_eval(&p, i, &q, &v);
            let logp = joint_log_density(&p, i, &q, &v).unwrap();
            prop_assert!((logp.exp() - naive).abs() <= 1e-9 * naive);
        }
    }

    #[test]
    fn value_inference_is_monotone(seed in any::<u64>()) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let q = random_vec(&mut r, d, 1.0);
        let v0 = random_vec(&mut r, m, 3.0);
        let inf = infer_value(&p, 0, &q, Some(&v0), &EmConfig::default()).unwrap();
        prop_assert!(inf.trace.max_decrease() <= 1e-10);
        prop_assert_eq!(&inf.trace.iterates[0].value, &v0);
    }

    #[test]
    fn converged_value_is_a_fixed_point(seed in any::<u64>()) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let q = random_vec(&mut r, d, 1.0);
        let cfg = EmConfig { max_iter: 1000, ..EmConfig::default() };
        let inf = infer_value(&p, 0, &q, None, &cfg).unwrap();
        prop_assume!(inf.trace.converged);
        let (next, row) = em_step(&p, 0, &q, &inf.value, WeightMode::Derived).unwrap();
        prop_assert!(max_abs_diff(&next, &inf.value) < 1e-7);
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inference_is_translation_equivariant(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let q = random_vec(&mut r, d, 1.0);
        let moved = ModelParams::new(
            p.pi().to_vec(),
            p.xi().iter().map(|x| x.iter().map(|c| c + shift).collect()).collect(),
            p.mu().iter().map(|u| u.iter().map(|c| c + shift).collect()).collect(),
            p.alpha().to_vec(),
            p.beta().to_vec(),
        ).unwrap();
        let qs: Vec<f64> = q.iter().map(|c| c + shift).collect();
        let a = infer_value(&p, 0, &q, None, &EmConfig::default()).unwrap();
        let b = infer_value(&moved, 0, &qs, None, &EmConfig::default()).unwrap();
        let back: Vec<f64> = b.value.iter().map(|c| c - shift).collect();
        prop_assert!(max_abs_diff(&a.value, &back) < 1e-6);
    }

    #[test]
    fn batch_matches_sequential_bitwise(seed in any::<u64>()) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let queries: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let cfg = EmConfig::default();
        let batch = batch_infer(&p, &queries, &cfg).unwrap();
        for (i, out) in batch.into_iter().enumerate() {
            let seq = infer_value(&p, i, &queries[i], None, &cfg).unwrap();
            prop_assert_eq!(out.unwrap(), seq);
        }
    }

    #[test]
    fn key_adaptation_is_monotone(seed in any::<u64>(), theta in 0.01f64..10.0, with_alpha in any::<bool>()) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let queries: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.5)).collect();
        let hyper = HyperPriors { theta_xi: theta, theta_alpha1: 2.0, theta_alpha2: 1.0, ..HyperPriors::weak(n) };
        let cfg = AdaptConfig { iters: 15, hyper, adapt_alpha: with_alpha };
        let out = adapt(&p, &queries, &cfg).unwrap();
        for w in out.objective.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "{:?}", out.objective);
        }
        prop_assert_eq!(out.params.mu(), p.mu());
    }

    #[test]
    fn mean_only_propagation_is_monotone(seed in 0u64..100) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let queries: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let s = r.random_range(1..=n);
        let corrected = (0..s).map(|unit| Correction { unit, value: random_vec(&mut r, m, 1.0) }).collect();
        let cs = CorrectionSet::new(queries, corrected);
        let hyper = HyperPriors { theta_mu: r.random_range(0.01..5.0), ..HyperPriors::weak(n) };
        let cfg = BpConfig { sweeps: 20, update_beta: false, update_pi: false, ..BpConfig::default() };
        let out = propagate(&p, &cs, &hyper, &cfg).unwrap();
        for w in out.audit.objective.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10, "{:?}", out.audit.objective);
        }
        let again = bp_objective(&out.params, p.mu(), &cs, &hyper).unwrap();
        prop_assert_eq!(again, *out.audit.objective.last().unwrap());
    }

    #[test]
    fn propagation_is_deterministic(seed in any::<u64>()) {
        let (mut r, n, d, m) = dims(seed);
        let p = random_model(&mut r, n, d, m);
        let queries: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let cs = CorrectionSet::new(queries, vec![Correction { unit: n - 1, value: random_vec(&mut r, m, 1.0) }]);
        let hyper = HyperPriors { theta_pi: HyperPriors::dirichlet_centered(p.pi(), 5.0), ..HyperPriors::weak(n) };
        let a = propagate(&p, &cs, &hyper, &BpConfig::default()).unwrap();
        let b = propagate(&p, &cs, &hyper, &BpConfig::default()).unwrap();
        prop_assert_eq!(&a.values[n - 1], &cs.corrected[0].value);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn model_text_round_trips_bitwise(
        seed in any::<u64>(),
        extremes in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..8),
    ) {
        let (mut r, n, d, m) = dims(seed);
        let base = random_model(&mut r, n, d, m);
        let mut xi = base.xi().to_vec();
        for (k, x) in extremes.iter().enumerate() {
            xi[k % n][k % d] = *x;
        }
        let p = ModelParams::new(base.pi().to_vec(), xi, base.mu().to_vec(), base.alpha().to_vec(), base.beta().to_vec()).unwrap();
        let model = LoadedModel::new(p);
        let back = parse_model(&model_to_text(&model)).unwrap();
        prop_assert!(same_bits(&model, &back));
    }
}

#[test]
fn log_path_survives_underflow() {
    let p = ModelParams::new(
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        vec![vec![0.0], vec![1.0]],
        vec![vec![0.0], vec![1.0]],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
    )
    .unwrap();
    let q = [150.0];
    let v = [0.5];
    assert_eq!(naive_mixture_eval(&p, 0, &q, &v), 0.0);
    let logp = joint_log_density(&p, 0, &q, &v).unwrap();
    assert!(logp.is_finite());
    let row = responsibilities(&p, 0, &q, &v).unwrap();
    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(row[1] > row[0]);
    let inf = infer_value(&p, 0, &q, None, &EmConfig::default()).unwrap();
    assert!(inf.value[0].is_finite());
}

#[test]
fn check_suite_small_run() {
    let report = suite::run(3);
    let failing: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    assert_eq!(failing, vec!["em_monotonicity_paper_literal"]);
}
