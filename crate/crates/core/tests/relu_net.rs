mod common;

use common::{random_network, reference_forward, small_network};
use flmip::relu_net::{
    fit_regression, scalar_map, Architecture, ReluNetwork, TrainConfig, TrainingGrid,
};
use flmip::BoxDomain;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nalgebra_forward(net: &ReluNetwork, input: &[f64]) -> Vec<f64> {
    let mut x = DVector::from_column_slice(input);
    for (k, layer) in net.layers().iter().enumerate() {
        let w = DMatrix::from_fn(layer.outputs(), layer.inputs(), |j, i| layer.weight(j, i));
        x = w * x + DVector::from_column_slice(layer.bias());
        if k + 1 < net.depth() {
            x.apply(|v| *v = v.max(0.0));
        }
    }
    x.as_slice().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn forward_matches_matrix_oracle(seed in any::<u64>(), input in prop::collection::vec(-5.0..5.0f64, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, 3, &[6, 5, 4], 2);
        let got = net.forward(&input).unwrap();
        for (a, b) in got.iter().zip(nalgebra_forward(&net, &input)) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        prop_assert_eq!(net.pre_activations(&input).unwrap().len(), net.depth());
    }

    #[test]
    fn json_round_trip_is_bit_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = small_network(&mut rng);
        let back = ReluNetwork::from_json(&net.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &net);
    }

    #[test]
    fn lipschitz_bound_holds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = small_network(&mut rng);
        let l = net.lipschitz_upper_bound();
        for _ in 0..50 {
            let a: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let dx = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let dy = (net.forward(&a).unwrap()[0] - net.forward(&b).unwrap()[0]).abs();
            prop_assert!(dy <= l * dx + 1e-12);
        }
    }

    /// Piecewise linear: along a segment inside one activation region the
    /// output is affine, so midpoints interpolate exactly.
    #[test]
    fn affine_between_nearby_points(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = small_network(&mut rng);
        let a: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + rng.random_range(-1e-7..1e-7)).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let pattern = |x: &[f64]| -> Vec<bool> {
            net.pre_activations(x).unwrap().iter().flatten().map(|p| *p > 0.0).collect()
        };
        prop_assume!(pattern(&a) == pattern(&b));
        let f = |x: &[f64]| net.forward(x).unwrap()[0];
        prop_assert!((f(&mid) - 0.5 * (f(&a) + f(&b))).abs() <= 1e-12);
    }
}

#[test]
fn matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let net = small_network(&mut rng);
        let x: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.random_range(-4.0..4.0))
            .collect();
        let (a, b) = (net.forward(&x).unwrap()[0], reference_forward(&net, &x)[0]);
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn malformed_json_is_rejected() {
    assert!(ReluNetwork::from_json("{\"layers\": []}").is_err());
    assert!(ReluNetwork::from_json(
        "{\"layers\": [{\"weights\": [[1.0, null]], \"bias\": [0.0]}]}"
    )
    .is_err());
    assert!(ReluNetwork::from_json("not json").is_err());
}

#[test]
fn training_is_deterministic_and_reduces_error() {
    let target = scalar_map(2, |x| (x[0] * x[1]).abs() - x[0]);
    let grid = TrainingGrid::new(BoxDomain::symmetric(&[1.0, 1.0]).unwrap(), 12, &target).unwrap();
    let arch = Architecture {
        layers: 3,
        width: 8,
    };
    let cfg = TrainConfig {
        seed: 9,
        epochs: 60,
        batch_size: 16,
        ..Default::default()
    };
    let (a, fa) = fit_regression(&grid, arch, &cfg).unwrap();
    let (b, _) = fit_regression(&grid, arch, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hidden_widths(), vec![8, 8]);
    assert!(fa.final_mse < fa.initial_mse);
    assert_eq!(fa.samples, 144);
}
