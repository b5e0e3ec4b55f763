use flowcast::bank::{extract_transitions, Trajectory, TransitionBank};
use flowcast::velocity::*;
use flowcast::{BridgeSchedule, PathFamily};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bank(rng: &mut ChaCha8Rng, m: usize, d: usize) -> TransitionBank {
    let trajs: Vec<_> = (0..m)
        .map(|i| {
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
            Trajectory::new(format!("p{i}"), 0.1, vec![a, b]).unwrap()
        })
        .collect();
    extract_transitions(&trajs).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-r..r)).collect()
}

/// Direct transcription of the closed-form field, no shared code path.
fn oracle_velocity(t: f64, z: &[f64], bank: &TransitionBank, s: &BridgeSchedule) -> Vec<f64> {
    let d = bank.dim();
    let c2 = s.sigma_min().powi(2) + s.sigma().powi(2) * t * (1.0 - t);
    let g = s.sigma().powi(2) * (1.0 - 2.0 * t) / (2.0 * c2);
    let means: Vec<Vec<f64>> = (0..bank.len())
        .map(|j| (0..d).map(|k| (1.0 - t) * bank.x1(j)[k] + t * bank.x2(j)[k]).collect())
        .collect();
    let logits: Vec<f64> = means
        .iter()
        .map(|m| -m.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * c2))
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let sw: f64 = w.iter().sum();
    (0..d)
        .map(|k| {
            g * z[k]
                + (0..bank.len())
                    .map(|j| w[j] / sw * (bank.x2(j)[k] - bank.x1(j)[k] - g * means[j][k]))
                    .sum::<f64>()
        })
        .collect()
}

#[test]
fn dense_field_matches_transcribed_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let d = rng.random_range(1..5);
        let m = rng.random_range(1..40);
        let bank = random_bank(&mut rng, m, d);
        let s = BridgeSchedule::new(rng.random_range(0.05..0.5), rng.random_range(0.0..1.0)).unwrap();
        let t = rng.random_range(0.0..=1.0);
        let z = random_point(&mut rng, d, 3.0);
        let v = velocity_dense(t, &z, &bank, &PathFamily::GaussianBridge(s)).unwrap().v;
        let o = oracle_velocity(t, &z, &bank, &s);
        for (a, b) in v.iter().zip(&o) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(1..=50);
        let bank = random_bank(&mut rng, m, d);
        let s = BridgeSchedule::new(rng.random_range(0.2..0.8), rng.random_range(0.0..1.0)).unwrap();
        let fam = PathFamily::GaussianBridge(s);
        let t = rng.random_range(0.0..=1.0);
        let z = random_point(&mut rng, d, 2.5);
        let jac = velocity_jacobian(t, &z, &bank, &fam).unwrap();
        let h = 1e-5;
        let mut fd = nalgebra::DMatrix::<f64>::zeros(d, d);
        for c in 0..d {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += h;
            zm[c] -= h;
            let vp = velocity_dense(t, &zp, &bank, &fam).unwrap().v;
            let vm = velocity_dense(t, &zm, &bank, &fam).unwrap().v;
            for r in 0..d {
                fd[(r, c)] = (vp[r] - vm[r]) / (2.0 * h);
            }
        }
        let rel = (&jac - &fd).norm() / jac.norm().max(1e-8);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn score_identity_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(1..=30);
        let bank = random_bank(&mut rng, m, d);
        let sig = rng.random_range(0.0..1.0);
        let s = BridgeSchedule::new(rng.random_range(0.05..0.5), sig).unwrap();
        let t = rng.random_range(0.0..=1.0);
        let z = random_point(&mut rng, d, 3.0);
        let v = velocity_dense(t, &z, &bank, &PathFamily::GaussianBridge(s)).unwrap();
        let sc = score(t, &z, &bank, &s).unwrap();
        let alpha = responsibilities(t, &z, &bank, &s).unwrap();
        for k in 0..d {
            let drift: f64 = alpha.iter().enumerate().map(|(j, a)| a * bank.increment(j)[k]).sum();
            let rhs = drift - sig * sig * (1.0 - 2.0 * t) / 2.0 * sc[k];
            assert!((v.v[k] - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{} vs {rhs}", v.v[k]);
        }
    }
}

#[test]
fn full_truncation_is_bitwise_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bank = random_bank(&mut rng, 64, 3);
    let fam = PathFamily::GaussianBridge(BridgeSchedule::new(0.2, 0.5).unwrap());
    for _ in 0..50 {
        let t = rng.random_range(0.0..=1.0);
        let z = random_point(&mut rng, 3, 3.0);
        let dense = velocity_dense(t, &z, &bank, &fam).unwrap();
        let full = velocity_top_r(t, &z, &bank, &fam, 64).unwrap();
        assert_eq!(dense.v, full.v);
        assert_eq!(full.kept_mass, 1.0);
    }
}

#[test]
fn sigma_zero_velocity_lies_in_increment_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let bank = random_bank(&mut rng, 20, 2);
        let s = BridgeSchedule::new(0.3, 0.0).unwrap();
        let t = rng.random_range(0.0..=1.0);
        let z = random_point(&mut rng, 2, 4.0);
        let v = velocity_dense(t, &z, &bank, &PathFamily::GaussianBridge(s)).unwrap().v;
        let max_inc = (0..bank.len())
            .map(|j| bank.increment(j).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= max_inc + 1e-12);
        for k in 0..2 {
            let lo = (0..bank.len()).map(|j| bank.increment(j)[k]).fold(f64::INFINITY, f64::min);
            let hi = (0..bank.len()).map(|j| bank.increment(j)[k]).fold(f64::NEG_INFINITY, f64::max);
            assert!(v[k] >= lo - 1e-12 && v[k] <= hi + 1e-12);
        }
    }
}

#[test]
fn rectified_flow_points_at_target() {
    let t = Trajectory::new("a", 1.0, vec![vec![0.0, 0.0], vec![1.0, -2.0]]).unwrap();
    let bank = extract_transitions(&[t]).unwrap();
    let fam = PathFamily::RectifiedFlow { sigma_min_rf: 0.0 };
    let v = velocity_dense(0.5, &[0.0, 0.0], &bank, &fam).unwrap().v;
    assert_eq!(v, vec![2.0, -4.0]);
    assert!(velocity_dense(1.0, &[0.0, 0.0], &bank, &fam).is_err());
    assert!(velocity_jacobian(0.5, &[0.0, 0.0], &bank, &fam).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_error_respects_mass_bound(seed in any::<u64>(), r in 1usize..30, t in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = random_bank(&mut rng, 30, 3);
        let s = BridgeSchedule::new(rng.random_range(0.1..1.0), rng.random_range(0.0..1.0)).unwrap();
        let fam = PathFamily::GaussianBridge(s);
        let z = random_point(&mut rng, 3, 3.0);
        let dense = velocity_dense(t, &z, &bank, &fam).unwrap();
        let trunc = velocity_top_r(t, &z, &bank, &fam, r).unwrap();
        let err = dense.v.iter().zip(&trunc.v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let labels = forcing_labels(t, &bank, &s);
        let c = labels.chunks(3).map(|y| y.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        prop_assert!(err <= 2.0 * c * (1.0 - trunc.kept_mass) + 1e-10);
        prop_assert_eq!(trunc.indices.as_ref().map(|i| i.len()), Some(r));
        prop_assert!((trunc.weights.as_ref().unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_form_a_distribution(seed in any::<u64>(), scale in 0.0f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = random_bank(&mut rng, 25, 2);
        let s = BridgeSchedule::new(0.05, 0.3).unwrap();
        let z = vec![scale, -scale];
        let a = responsibilities(rng.random_range(0.0..=1.0), &z, &bank, &s).unwrap();
        prop_assert!(a.iter().all(|w| *w >= 0.0 && w.is_finite()));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
