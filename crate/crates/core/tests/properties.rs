//! Property tests for the cross-module invariants.

use forge_core::checkpoint::{Checkpoint, Role};
use forge_core::data::{gen_blobs, split_classwise, split_random, Part, SplitDataset};
use forge_core::metrics::{mia_attack, mia_candidates, quadratic_rcd_limit, rcd, PhiKind};
use forge_core::models::{make_quadratic, Activation, ModelSpec, NoiseScope};
use forge_core::numcore::streams;
use forge_core::training::OptimizerConfig;
use forge_core::unlearning::{ieu_step, irp_run};
use forge_core::{derive_stream, ParamVector};
use proptest::prelude::*;

fn spectrum_strategy(max_d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_d)
        .prop_flat_map(|d| (prop::collection::vec(0.01f64..10.0, d), prop::collection::vec(-3.0f64..3.0, d)))
        .prop_map(|(mut s, x)| {
            s.sort_by(|a, b| b.total_cmp(a));
            (s, x)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rcd_nonnegative_monotone_and_bounded((spectrum, start) in spectrum_strategy(8), l_star in -2.0f64..2.0) {
        let d = spectrum.len();
        let f = make_quadratic(spectrum.clone(), ParamVector::zeros(d).unwrap(), l_star).unwrap();
        let beta = spectrum.iter().cloned().fold(0.0, f64::max);
        let theta = ParamVector::new(start).unwrap();
        let rep = rcd(&theta, &f, l_star, 150, &OptimizerConfig::gd(1.0 / beta, 0), PhiKind::Loss, &mut derive_stream(0, streams::RELEARN)).unwrap();
        let bound = rep.theorem1_bound.unwrap();
        let mut partial = 0.0;
        for e in &rep.errors {
            prop_assert!(*e >= -1e-12);
            partial += e;
            prop_assert!(partial <= bound + 1e-8);
        }
        prop_assert!((partial - rep.rcd_value).abs() <= 1e-12 * rep.rcd_value.abs().max(1.0));
        let limit = quadratic_rcd_limit(&f, &theta, 1.0 / beta).unwrap();
        prop_assert!(rep.rcd_value <= limit + 1e-9 * limit.max(1.0));
        prop_assert!(limit <= bound + 1e-8);
    }

    #[test]
    fn geometric_decay_and_gradient_dominance((spectrum, start) in spectrum_strategy(6)) {
        let d = spectrum.len();
        let f = make_quadratic(spectrum.clone(), ParamVector::zeros(d).unwrap(), 0.0).unwrap();
        let (mu, beta) = f.quadratic_bounds().unwrap();
        let mut theta = start;
        for _ in 0..60 {
            let t = ParamVector::new(theta.clone()).unwrap();
            let (l, g) = f.value_and_gradient(&t).unwrap();
            prop_assert!(g.norm().powi(2) - 2.0 * mu * l >= -1e-10);
            for (x, gi) in theta.iter_mut().zip(g.as_slice()) {
                *x -= gi / beta;
            }
            let next = f.value(&ParamVector::new(theta.clone()).unwrap()).unwrap();
            prop_assert!((1.0 - mu / beta) * l - next >= -1e-10);
        }
    }

    #[test]
    fn random_split_partitions_train(seed in 0u64..1000, frac in 0.05f64..0.9) {
        let ds = gen_blobs(12, 3, 2, 3.0, 0.5, seed).unwrap();
        let s = split_random(&ds, frac, seed ^ 7).unwrap();
        check_partition(&s);
        prop_assert_eq!(s.indices(Part::Forget).len(), (frac * s.indices(Part::Train).len() as f64).floor() as usize);
    }

    #[test]
    fn classwise_split_is_exactly_the_forgotten_classes(seed in 0u64..1000, k in 1usize..5) {
        let ds = gen_blobs(8, 6, 2, 3.0, 0.5, seed).unwrap();
        let s = split_classwise(&ds, k as f64 / 6.0, seed).unwrap();
        check_partition(&s);
        let classes = s.forgotten_classes().unwrap().to_vec();
        prop_assert_eq!(classes.len(), k);
        let forgotten: Vec<usize> = s.indices(Part::Train).into_iter().filter(|i| classes.contains(&(i % 6))).collect();
        prop_assert_eq!(s.indices(Part::Forget), forgotten);
    }

    #[test]
    fn dataset_bytes_round_trip(seed in 0u64..500) {
        let s = split_random(&gen_blobs(5, 3, 3, 3.0, 0.5, seed).unwrap(), 0.3, seed).unwrap();
        let b = s.to_bytes().unwrap();
        let back = SplitDataset::from_bytes(&b).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), b);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), hidden in 1usize..6) {
        let spec = ModelSpec::mlp(3, &[hidden], 2, Activation::Tanh, 1e-4).unwrap();
        let theta = spec.kaiming_init(NoiseScope::PerLayerFanIn, &mut derive_stream(seed, streams::INIT)).unwrap();
        let ck = Checkpoint::new(Role::Unlearned, seed, spec, serde_json::json!({"seed": seed}), theta).unwrap();
        let b = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&b).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), b);
    }

    #[test]
    fn ieu_step_without_noise_or_ascent_is_gradient_descent(
        theta in prop::collection::vec(-5.0f64..5.0, 4),
        g in prop::collection::vec(-5.0f64..5.0, 4),
        eta in 0.0f64..1.0,
    ) {
        let spec = ModelSpec::quadratic(vec![1.0; 4], vec![0.0; 4], 0.0).unwrap();
        let t = ParamVector::new(theta.clone()).unwrap();
        let gr = ParamVector::new(g.clone()).unwrap();
        let out = ieu_step(&t, &gr, &gr, 1.0, 0.0, eta, &mut derive_stream(1, 1), &spec, NoiseScope::GlobalD).unwrap();
        for i in 0..4 {
            prop_assert_eq!(out.as_slice()[i].to_bits(), (theta[i] - eta * g[i]).to_bits());
        }
    }

    #[test]
    fn irp_trajectory_has_steps_plus_one_finite_states(alpha in 0.0f64..1.0, seed in any::<u64>()) {
        let theta = ParamVector::new(vec![3.0; 50]).unwrap();
        let traj = irp_run(&theta, alpha, 3, derive_stream(seed, streams::IRP)).unwrap();
        prop_assert_eq!(traj.len(), 4);
        prop_assert!(traj.iter().all(|t| t.as_slice().iter().all(|x| x.is_finite())));
    }

    #[test]
    fn mia_threshold_is_optimal(
        retain in prop::collection::vec(0u8..20, 1..80),
        test in prop::collection::vec(0u8..20, 1..80),
        forget in prop::collection::vec(0u8..20, 1..40),
    ) {
        let f = |v: &[u8]| v.iter().map(|&x| x as f64 * 0.1).collect::<Vec<_>>();
        let (r, t, fg) = (f(&retain), f(&test), f(&forget));
        let res = mia_attack(&r, &t, &fg).unwrap();
        let score = |tau: f64| {
            let tp = r.iter().filter(|&&l| l <= tau).count() as u128;
            let tn = t.iter().filter(|&&l| l > tau).count() as u128;
            tp * t.len() as u128 + tn * r.len() as u128
        };
        let best = mia_candidates(&r, &t).into_iter().map(score).max().unwrap();
        prop_assert_eq!(score(res.threshold), best);
        prop_assert!((0.0..=1.0).contains(&res.member_rate));
        prop_assert!((0.5..=1.0).contains(&res.balanced_accuracy));
    }
}

fn check_partition(s: &SplitDataset) {
    let mut r = s.indices(Part::Retain);
    let f = s.indices(Part::Forget);
    assert!(r.iter().all(|i| !f.contains(i)));
    r.extend(&f);
    r.sort_unstable();
    assert_eq!(r, s.indices(Part::Train));
    assert!(s.indices(Part::Test).iter().all(|i| *i < s.len()));
}
