mod common;

use common::random_network;
use flmip::errbound::{estimate_epsilon, validate_epsilon, ErrorBoundReport, PsoConfig};
use flmip::relu_net::{scalar_map, ReluNetwork};
use flmip::BoxDomain;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(seed: u64) -> PsoConfig {
    PsoConfig {
        particles: 40,
        iterations: 60,
        restarts: 2,
        grid_per_axis: 6,
        seed,
        ..Default::default()
    }
}

fn setup(seed: u64) -> (ReluNetwork, BoxDomain) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        random_network(&mut rng, 2, &[5, 5], 1),
        BoxDomain::symmetric(&[2.0, 2.0]).unwrap(),
    )
}

fn target(x: &[f64]) -> f64 {
    (3.0 * x[0]).sin() + 0.5 * x[1] * x[1]
}

/// Dense-scan maximum of `|f − net|`, independent of the crate's grids.
fn scan_max(net: &ReluNetwork, n: usize) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..=n {
        for j in 0..=n {
            let x = [
                -2.0 + 4.0 * i as f64 / n as f64,
                -2.0 + 4.0 * j as f64 / n as f64,
            ];
            best = best.max((target(&x) - net.forward(&x).unwrap()[0]).abs());
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn estimate_dominates_seed_points(seed in any::<u64>(), px in -2.0..2.0f64, py in -2.0..2.0f64) {
        let (net, domain) = setup(seed);
        let phi = scalar_map(2, target);
        let r = estimate_epsilon(&phi, &net, &domain, &cfg(seed), &[vec![px, py]]).unwrap();
        let at = (target(&[px, py]) - net.forward(&[px, py]).unwrap()[0]).abs();
        prop_assert!(r.epsilon[0] >= at);
        prop_assert!(r.epsilon[0] >= r.grid_max[0]);
        prop_assert!((r.epsilon[0] - (1.0 + r.margin) * r.swarm_max[0].max(r.grid_max[0])).abs() <= 1e-12);
    }

    #[test]
    fn estimate_is_deterministic(seed in any::<u64>()) {
        let (net, domain) = setup(seed);
        let phi = scalar_map(2, target);
        let a = estimate_epsilon(&phi, &net, &domain, &cfg(seed), &[]).unwrap();
        let b = estimate_epsilon(&phi, &net, &domain, &cfg(seed), &[]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn more_restarts_never_lower_the_swarm_max(seed in any::<u64>()) {
        let (net, domain) = setup(seed);
        let phi = scalar_map(2, target);
        let few = estimate_epsilon(&phi, &net, &domain, &cfg(seed), &[]).unwrap();
        let many = estimate_epsilon(&phi, &net, &domain, &PsoConfig { restarts: 4, ..cfg(seed) }, &[]).unwrap();
        prop_assert!(many.swarm_max[0] >= few.swarm_max[0]);
    }
}

#[test]
fn swarm_finds_the_dense_scan_maximum() {
    let (net, domain) = setup(3);
    let phi = scalar_map(2, target);
    let r = estimate_epsilon(&phi, &net, &domain, &PsoConfig::default(), &[]).unwrap();
    let dense = scan_max(&net, 400);
    assert!(
        r.swarm_max[0] >= dense * (1.0 - 1e-3),
        "{} vs {dense}",
        r.swarm_max[0]
    );
    let v = validate_epsilon(&phi, &net, &domain, &r.epsilon, 60).unwrap();
    assert!(v.passed);
    assert_eq!(v.points, 3600);
}

#[test]
fn validation_fails_below_the_true_error() {
    let (net, domain) = setup(4);
    let phi = scalar_map(2, target);
    let dense = scan_max(&net, 200);
    let v = validate_epsilon(&phi, &net, &domain, &[0.5 * dense], 40).unwrap();
    assert!(!v.passed);
    assert!(v.worst_residual[0] > 0.5 * dense);
}

#[test]
fn report_round_trips_through_json() {
    let (net, domain) = setup(5);
    let phi = scalar_map(2, target);
    let r = estimate_epsilon(&phi, &net, &domain, &cfg(5), &[]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.json");
    r.save(&path).unwrap();
    assert_eq!(ErrorBoundReport::load(&path).unwrap(), r);
}

#[test]
fn rejects_seed_points_outside_the_domain() {
    let (net, domain) = setup(6);
    let phi = scalar_map(2, target);
    assert!(estimate_epsilon(&phi, &net, &domain, &cfg(6), &[vec![3.0, 0.0]]).is_err());
}
