use flowcast::bank::{extract_transitions, TransitionBank};
use flowcast::diagnostics::*;
use flowcast::dynamics::{generate_benchmark, SamplingPlan, SystemName, SystemSpec};
use flowcast::{BridgeSchedule, SolverConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lorenz_bank(n: usize, len: usize) -> TransitionBank {
    let spec = SystemSpec::new(SystemName::Lorenz63);
    let mut plan = SamplingPlan::standard(SystemName::Lorenz63, 0.906);
    plan.n_trajectories = n;
    plan.length = len;
    extract_transitions(&generate_benchmark(&spec, &plan, 0).unwrap()).unwrap()
}

#[test]
fn truncation_bound_holds_on_lorenz_bank() {
    let bank = lorenz_bank(4, 200);
    let sched = BridgeSchedule::default_for(&bank);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for r in [1, 16, 256] {
        let rep = check_truncation_bound(&bank, &sched, r, 200, &mut rng).unwrap();
        assert!(rep.pass, "R={r}: {}", rep.max_violation);
        assert_eq!(rep.probes, 200);
    }
}

#[test]
fn lipschitz_bound_holds() {
    let bank = lorenz_bank(2, 60);
    let sched = BridgeSchedule::default_for(&bank);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let zs: Vec<Vec<f64>> = (0..20).map(|_| probe_point(&bank, &mut rng)).collect();
    let rep = check_lipschitz_bound(&bank, &sched, &grid, &zs).unwrap();
    assert!(rep.pass, "{}", rep.max_violation);
    assert_eq!(rep.probes, 11 * 20);
}

#[test]
fn duhamel_and_equivariance_pass() {
    let bank = lorenz_bank(2, 60);
    let sched = BridgeSchedule::default_for(&bank);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rep = check_duhamel(&bank, &sched, &SolverConfig::default(), 4, &mut rng).unwrap();
    assert!(rep.pass, "{:?}", rep.details.get(rep.worst_probe.unwrap()));
    let rep = check_equivariance(&bank, &sched, 100, &mut rng).unwrap();
    assert!(rep.pass, "{:?}", rep.details.get(rep.worst_probe.unwrap()));
}

#[test]
fn cost_counts_are_exact() {
    let bank = lorenz_bank(4, 300);
    let sched = BridgeSchedule::default_for(&bank);
    let cost = measure_cost(&bank, &[150, 300, 600, 1196], &[16, 256], &sched).unwrap();
    for row in &cost.rows {
        assert_eq!(row.distance_evals, row.m);
        assert_eq!(row.mixture_terms, row.r.unwrap_or(row.m));
    }
    assert!(cost.dense_linearity_spread >= 1.0);
}
