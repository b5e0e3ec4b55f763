use flowcast::metrics::*;
use flowcast::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn brute_force_crps(samples: &[f64], y: f64) -> f64 {
    let n = samples.len() as f64;
    let a: f64 = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let b: f64 = samples
        .iter()
        .flat_map(|x| samples.iter().map(move |xp| (x - xp).abs()))
        .sum::<f64>()
        / (n * n);
    a - 0.5 * b
}

/// Histogram KL with explicit bin edges and add-one smoothing.
fn oracle_kl(p: &[Vec<f64>], q: &[Vec<f64>], bins: usize) -> f64 {
    let d = p[0].len();
    let mut acc = 0.0;
    for k in 0..d {
        let all: Vec<f64> = p.iter().chain(q).map(|x| x[k]).collect();
        let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let edges: Vec<f64> = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
        let count = |cloud: &[Vec<f64>]| {
            let mut c = vec![1.0; bins];
            for x in cloud {
                let b = (1..bins).rev().find(|&i| x[k] >= edges[i]).unwrap_or(0);
                c[b] += 1.0;
            }
            let n = cloud.len() as f64 + bins as f64;
            c.into_iter().map(|v| v / n).collect::<Vec<f64>>()
        };
        let (hp, hq) = (count(p), count(q));
        acc += hp.iter().zip(&hq).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
    }
    acc / d as f64
}

fn cloud(rng: &mut ChaCha8Rng, n: usize, center: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..3).map(|_| center + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

#[test]
fn smape_worked_examples() {
    assert_eq!(smape(&[vec![1.0]], &[vec![3.0]]).unwrap(), vec![100.0]);
    assert_eq!(smape(&[vec![1.0]], &[vec![-1.0]]).unwrap(), vec![200.0]);
    assert_eq!(smape(&[vec![2.0, -4.0]], &[vec![2.0, -4.0]]).unwrap(), vec![0.0]);
}

#[test]
fn vpt_worked_example() {
    assert!((vpt_from_smape(&[5.0, 10.0, 25.0, 5.0], 20.0, 100) - 0.02).abs() < 1e-15);
    assert_eq!(vpt_from_smape(&[30.0, 1.0], 20.0, 100), 0.0);
    assert!((vpt_from_smape(&[1.0; 250], 20.0, 100) - 2.5).abs() < 1e-15);
}

#[test]
fn crps_worked_examples() {
    assert_eq!(crps(&[1.0, 1.0, 1.0], 1.0), 0.0);
    assert!((crps(&[0.0, 2.0], 1.0) - 0.5).abs() < 1e-15);
    assert_eq!(crps(&[1.0], 0.0), 1.0);
}

#[test]
fn crps_matches_all_pairs_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 2, 3, 10, 50, 101] {
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = rng.random_range(-5.0..5.0);
        assert!((crps(&xs, y) - brute_force_crps(&xs, y)).abs() < 1e-12);
    }
}

#[test]
fn correlation_dimension_of_line_and_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let line: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let s: f64 = rng.random();
            vec![s, 0.5 * s, -0.25 * s]
        })
        .collect();
    let grid = log_radius_grid(&line, 40);
    let fit = correlation_dimension(&line, &grid, DEFAULT_FIT_WINDOW).unwrap();
    assert!((fit.dimension - 1.0).abs() <= 0.1, "{}", fit.dimension);

    let square: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.random(), rng.random(), 0.0]).collect();
    let grid = log_radius_grid(&square, 40);
    let fit = correlation_dimension(&square, &grid, DEFAULT_FIT_WINDOW).unwrap();
    assert!((fit.dimension - 2.0).abs() <= 0.15, "{}", fit.dimension);
}

#[test]
fn identical_points_have_no_scaling_range() {
    let pts = vec![vec![1.0, 2.0, 3.0]; 200];
    let grid: Vec<f64> = (0..20).map(|i| 10f64.powf(-3.0 + 0.2 * i as f64)).collect();
    assert!(matches!(
        correlation_dimension(&pts, &grid, DEFAULT_FIT_WINDOW),
        Err(Error::InsufficientScaling { .. })
    ));
}

#[test]
fn kl_of_separated_clouds_matches_histogram_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = cloud(&mut rng, 2000, 0.0);
    let q = cloud(&mut rng, 2000, 12.0);
    let kl = kl_divergence(&p, &q, 30).unwrap();
    let oracle = oracle_kl(&p, &q, 30);
    assert!((kl - oracle).abs() < 1e-9, "{kl} vs {oracle}");
    assert!(kl > 3.0 && kl.is_finite());
    assert_eq!(kl_divergence(&p, &p, 30).unwrap(), 0.0);
}

#[test]
fn kl_is_nonnegative_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let shift = rng.random_range(0.0..3.0);
        let p = cloud(&mut rng, 200, 0.0);
        let q = cloud(&mut rng, 150, shift);
        assert!(kl_divergence(&p, &q, 20).unwrap() >= 0.0);
    }
}

proptest! {
    #[test]
    fn smape_is_bounded_and_symmetric(
        y in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..10),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let yhat: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|v| v + rng.random_range(-50.0..50.0)).collect()).collect();
        let a = smape(&y, &yhat).unwrap();
        let b = smape(&yhat, &y).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|v| (0.0..=200.0).contains(v)));
    }

    #[test]
    fn crps_is_translation_invariant(xs in prop::collection::vec(-10.0f64..10.0, 1..40), y in -10.0f64..10.0, c in -100.0f64..100.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((crps(&shifted, y + c) - crps(&xs, y)).abs() < 1e-9);
        prop_assert!(crps(&xs, y) >= 0.0);
    }

    #[test]
    fn tighter_threshold_never_extends_vpt(s in prop::collection::vec(0.0f64..200.0, 1..100), e1 in 1.0f64..100.0, e2 in 1.0f64..100.0) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(vpt_from_smape(&s, lo, 100) <= vpt_from_smape(&s, hi, 100));
    }
}
