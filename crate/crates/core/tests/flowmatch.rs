use ndarray::{Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenecomp_core::flowmatch::*;

fn random(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_simple_fn(dim, || rng.random_range(-2.0..2.0))
}

#[test]
fn interpolation_endpoints_and_midpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z0 = random(&mut rng, (2, 3, 3, 2));
    let z1 = random(&mut rng, (2, 3, 3, 2));
    assert_eq!(interpolate(&z0.view(), &z1.view(), 0.0).unwrap(), z0);
    assert_eq!(interpolate(&z0.view(), &z1.view(), 1.0).unwrap(), z1);
    let zeros = Array4::<f64>::zeros((1, 2, 2, 1));
    let twos = Array4::from_elem((1, 2, 2, 1), 2.0);
    assert!(interpolate(&zeros.view(), &twos.view(), 0.5)
        .unwrap()
        .iter()
        .all(|v| *v == 1.0));
    assert!(interpolate(&z0.view(), &zeros.view(), 0.5).is_err());
    assert!(interpolate(&z0.view(), &z1.view(), 1.5).is_err());
}

#[test]
fn velocity_target_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z0 = random(&mut rng, (1, 2, 2, 3));
    let z1 = random(&mut rng, (1, 2, 2, 3));
    assert!(velocity_target(&z0.view(), &z0.view())
        .unwrap()
        .iter()
        .all(|v| *v == 0.0));
    let zero = Array4::zeros(z1.raw_dim());
    assert_eq!(velocity_target(&zero.view(), &z1.view()).unwrap(), z1);
    let a = 1.7;
    let lhs = velocity_target(&(&z0 * a).view(), &(&z1 * a).view()).unwrap();
    let rhs = velocity_target(&z0.view(), &z1.view()).unwrap() * a;
    assert!(lhs
        .iter()
        .zip(rhs.iter())
        .all(|(x, y)| (x - y).abs() < 1e-12));
}

#[test]
fn masked_target_selects_per_element() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z0 = random(&mut rng, (2, 4, 4, 3));
    let keep = random(&mut rng, (2, 4, 4, 3));
    let ones = Array3::ones((2, 4, 4));
    assert_eq!(
        masked_target(&z0.view(), &keep.view(), &ones.view()).unwrap(),
        z0
    );
    let zeros = Array3::zeros((2, 4, 4));
    assert_eq!(
        masked_target(&z0.view(), &keep.view(), &zeros.view()).unwrap(),
        keep
    );
    let checker = Array3::from_shape_fn((2, 4, 4), |(t, y, x)| ((t + y + x) % 2) as f64);
    let got = masked_target(&z0.view(), &keep.view(), &checker.view()).unwrap();
    for t in 0..2 {
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    let want = if (t + y + x) % 2 == 1 {
                        z0[[t, y, x, c]]
                    } else {
                        keep[[t, y, x, c]]
                    };
                    assert_eq!(got[[t, y, x, c]], want);
                }
            }
        }
    }
    let mut bad = checker.clone();
    bad[[0, 0, 0]] = 0.3;
    assert!(masked_target(&z0.view(), &keep.view(), &bad.view()).is_err());
}

#[test]
fn loss_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z0 = random(&mut rng, (2, 2, 2, 1));
    let z1 = random(&mut rng, (2, 2, 2, 1));
    let v = &z1 - &z0;
    assert_eq!(fm_loss(&v.view(), &z0.view(), &z1.view()).unwrap(), 0.0);
    let eps = 0.125;
    let off = &v + eps;
    assert!((fm_loss(&off.view(), &z0.view(), &z1.view()).unwrap() - eps * eps).abs() < 1e-15);
    let pred = random(&mut rng, (2, 2, 2, 1));
    let mut sum = 0.0;
    let mut n = 0;
    for t in 0..2 {
        for y in 0..2 {
            for x in 0..2 {
                let r = pred[[t, y, x, 0]] - (z1[[t, y, x, 0]] - z0[[t, y, x, 0]]);
                sum += r * r;
                n += 1;
            }
        }
    }
    assert!(
        (fm_loss(&pred.view(), &z0.view(), &z1.view()).unwrap() - sum / n as f64).abs() < 1e-14
    );
    let wrong = Array4::zeros((1, 2, 2, 1));
    assert!(fm_loss(&wrong.view(), &z0.view(), &z1.view()).is_err());
}

#[test]
fn restricted_loss_ignores_outside() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z0 = random(&mut rng, (1, 2, 2, 2));
    let z1 = random(&mut rng, (1, 2, 2, 2));
    let mut pred = &z1 - &z0;
    pred[[0, 0, 0, 0]] += 3.0;
    pred[[0, 1, 1, 1]] += 1.0;
    let mut region = Array3::zeros((1, 2, 2));
    region[[0, 1, 1]] = 1.0;
    let (loss, grad) = fm_loss_and_grad(
        &pred.view(),
        &z0.view(),
        &z1.view(),
        &LossRegion::Within(region),
    )
    .unwrap();
    assert!((loss - 1.0 / 8.0).abs() < 1e-14);
    assert_eq!(grad[[0, 0, 0, 0]], 0.0);
    assert!((grad[[0, 1, 1, 1]] - 2.0 / 8.0).abs() < 1e-14);
}

#[test]
fn loss_gradient_matches_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z0 = random(&mut rng, (1, 2, 2, 2));
    let z1 = random(&mut rng, (1, 2, 2, 2));
    let pred = random(&mut rng, (1, 2, 2, 2));
    let (_, g) = fm_loss_and_grad(&pred.view(), &z0.view(), &z1.view(), &LossRegion::All).unwrap();
    for i in 0..pred.len() {
        let mut p = pred.clone();
        let mut m = pred.clone();
        p.as_slice_mut().unwrap()[i] += 1e-6;
        m.as_slice_mut().unwrap()[i] -= 1e-6;
        let fd = (fm_loss(&p.view(), &z0.view(), &z1.view()).unwrap()
            - fm_loss(&m.view(), &z0.view(), &z1.view()).unwrap())
            / 2e-6;
        assert!((fd - g.as_slice().unwrap()[i]).abs() < 1e-8);
    }
}

#[test]
fn degenerate_sampler_is_constant() {
    let mut s = TimestepSampler::new(
        LogitNormal {
            mu: 0.0,
            sigma: 0.0,
        },
        9,
    )
    .unwrap();
    for _ in 0..100 {
        assert_eq!(sample_timestep(&mut s), 0.5);
    }
    assert!(TimestepSampler::new(
        LogitNormal {
            mu: 0.0,
            sigma: -1.0
        },
        0
    )
    .is_err());
}

#[test]
fn timesteps_stay_open_and_center_on_sigmoid_mu() {
    for mu in [0.0, 0.8] {
        let mut s = TimestepSampler::new(LogitNormal { mu, sigma: 1.0 }, 10).unwrap();
        let mut draws: Vec<f64> = (0..100_000).map(|_| sample_timestep(&mut s)).collect();
        assert!(draws.iter().all(|t| *t > 0.0 && *t < 1.0));
        draws.sort_by(f64::total_cmp);
        let median = draws[draws.len() / 2];
        let want = 1.0 / (1.0 + (-mu).exp());
        assert!((median - want).abs() < 0.02, "median {median} vs {want}");
    }
}

#[test]
fn degenerate_schedule_is_always_scene_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sched = ModeSchedule {
        scene_only: 1.0,
        motion_only: 0.0,
        full: 0.0,
        ..ModeSchedule::default()
    };
    for _ in 0..1000 {
        assert_eq!(
            pick_training_mode(&mut rng, &sched).unwrap().kind,
            ModeKind::SceneOnly
        );
    }
    let bad = ModeSchedule {
        full: 0.5,
        ..ModeSchedule::default()
    };
    assert!(pick_training_mode(&mut rng, &bad).is_err());
}

#[test]
fn default_schedule_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sched = ModeSchedule::default();
    let n = 100_000;
    let mut counts = [0usize; 3];
    let mut hist = 0usize;
    for _ in 0..n {
        let m = pick_training_mode(&mut rng, &sched).unwrap();
        counts[m.kind as usize] += 1;
        if m.history_frames > 0 {
            hist += 1;
            assert!((1..=9).contains(&m.history_frames));
        }
    }
    let f = |c: usize| c as f64 / n as f64;
    assert!((f(counts[0]) - 0.10).abs() < 0.01);
    assert!((f(counts[1]) - 0.25).abs() < 0.01);
    assert!((f(counts[2]) - 0.65).abs() < 0.01);
    assert!((f(hist) - 0.5).abs() < 0.01);
}

#[test]
fn oracle_velocity_recovers_data_in_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z0 = random(&mut rng, (2, 3, 3, 4));
    let z1 = random(&mut rng, (2, 3, 3, 4));
    let v = &z1 - &z0;
    let oracle = |_: &Array4<f64>, _: f64| Ok(v.clone());
    let one = euler_sample(oracle, &z1.view(), 1).unwrap();
    assert!(one
        .iter()
        .zip(z0.iter())
        .all(|(a, b)| (a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(4.0)));
    let fifty = euler_sample(oracle, &z1.view(), 50).unwrap();
    assert!(one
        .iter()
        .zip(fifty.iter())
        .all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(euler_sample(oracle, &z1.view(), 0).is_err());
}

#[test]
fn euler_reports_non_finite_step() {
    let z1 = Array4::<f64>::zeros((1, 1, 1, 1));
    let mut calls = 0;
    let field = |z: &Array4<f64>, _: f64| {
        calls += 1;
        let fill = if calls == 3 { f64::NAN } else { 1.0 };
        Ok(Array4::from_elem(z.raw_dim(), fill))
    };
    match euler_sample(field, &z1.view(), 5) {
        Err(scenecomp_core::Error::NonFinite { index, .. }) => assert_eq!(index, 2),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_derivative_is_velocity(seed in any::<u64>(), t in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = random(&mut rng, (1, 2, 2, 2));
        let z1 = random(&mut rng, (1, 2, 2, 2));
        let h = 1e-4;
        let fd = (interpolate(&z0.view(), &z1.view(), t + h).unwrap() - interpolate(&z0.view(), &z1.view(), t - h).unwrap()) / (2.0 * h);
        let v = velocity_target(&z0.view(), &z1.view()).unwrap();
        for (a, b) in fd.iter().zip(v.iter()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_target(seed in any::<u64>(), bump in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = random(&mut rng, (1, 2, 2, 2));
        let z1 = random(&mut rng, (1, 2, 2, 2));
        let pred = random(&mut rng, (1, 2, 2, 2));
        prop_assert!(fm_loss(&pred.view(), &z0.view(), &z1.view()).unwrap() >= 0.0);
        let mut exact = &z1 - &z0;
        prop_assert_eq!(fm_loss(&exact.view(), &z0.view(), &z1.view()).unwrap(), 0.0);
        exact.as_slice_mut().unwrap()[bump] += 1e-3;
        prop_assert!(fm_loss(&exact.view(), &z0.view(), &z1.view()).unwrap() > 0.0);
    }

    #[test]
    fn masked_target_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = random(&mut rng, (2, 3, 3, 2));
        let keep = random(&mut rng, (2, 3, 3, 2));
        let mask = Array3::from_shape_simple_fn((2, 3, 3), || if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let once = masked_target(&z0.view(), &keep.view(), &mask.view()).unwrap();
        let twice = masked_target(&once.view(), &keep.view(), &mask.view()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn constant_field_is_step_invariant(seed in any::<u64>(), steps in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z1 = random(&mut rng, (1, 2, 2, 2));
        let c = random(&mut rng, (1, 2, 2, 2));
        let field = |_: &Array4<f64>, _: f64| Ok(c.clone());
        let a = euler_sample(field, &z1.view(), 1).unwrap();
        let b = euler_sample(field, &z1.view(), steps).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
