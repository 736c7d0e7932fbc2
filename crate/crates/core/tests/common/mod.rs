#![allow(dead_code)]

use flmip::encoder::{MiConstraintSystem, Objective, Sense, VarId};
use flmip::relu_net::{Layer, ReluNetwork};
use flmip::BoxDomain;
use rand::Rng;

pub fn random_network(
    rng: &mut impl Rng,
    input_dim: usize,
    hidden: &[usize],
    output_dim: usize,
) -> ReluNetwork {
    let mut widths = vec![input_dim];
    widths.extend_from_slice(hidden);
    widths.push(output_dim);
    let layers = widths
        .windows(2)
        .map(|w| {
            let rows = (0..w[1])
                .map(|_| (0..w[0]).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
            Layer::new(rows, bias).unwrap()
        })
        .collect();
    ReluNetwork::new(layers).unwrap()
}

/// At most 3 hidden layers of width at most 4.
pub fn small_network(rng: &mut impl Rng) -> ReluNetwork {
    let input_dim = rng.random_range(1..=3);
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=4)).collect();
    random_network(rng, input_dim, &hidden, 1)
}

pub fn random_box(rng: &mut impl Rng, dim: usize) -> BoxDomain {
    let mut lower = Vec::with_capacity(dim);
    let mut upper = Vec::with_capacity(dim);
    for _ in 0..dim {
        let c: f64 = rng.random_range(-2.0..2.0);
        let r: f64 = rng.random_range(0.1..3.0);
        lower.push(c - r);
        upper.push(c + r);
    }
    BoxDomain::new(lower, upper).unwrap()
}

pub fn sample_in(rng: &mut impl Rng, b: &BoxDomain) -> Vec<f64> {
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(l, u)| {
            if l == u {
                *l
            } else {
                rng.random_range(*l..=*u)
            }
        })
        .collect()
}

/// Plain nested-loop forward pass, kept free of the library's buffers.
pub fn reference_forward(net: &ReluNetwork, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for (k, layer) in net.layers().iter().enumerate() {
        let mut y: Vec<f64> = (0..layer.outputs())
            .map(|j| {
                layer.bias()[j]
                    + (0..layer.inputs())
                        .map(|i| layer.weight(j, i) * x[i])
                        .sum::<f64>()
            })
            .collect();
        if k + 1 < net.depth() {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        x = y;
    }
    x
}

/// Small convex MIQP: continuous `y ∈ [-5, 5]`, binaries switching
/// individual `y_j` on through big-M rows, a few dense coupling rows and a
/// separable quadratic objective. The dense rows are satisfied by a random
/// reference point up to a random slack, which is sometimes negative.
pub fn random_mi_problem(rng: &mut impl Rng, binaries: usize) -> MiConstraintSystem {
    let mut sys = MiConstraintSystem::new();
    let nc = rng.random_range(2..=4);
    let y: Vec<VarId> = (0..nc)
        .map(|j| sys.add_continuous(format!("y{j}"), -5.0, 5.0))
        .collect();
    let b: Vec<VarId> = (0..binaries)
        .map(|k| sys.add_binary(format!("b{k}")))
        .collect();
    let y0: Vec<f64> = (0..nc).map(|_| rng.random_range(-3.0..3.0)).collect();
    let b0: Vec<f64> = (0..binaries)
        .map(|_| f64::from(rng.random_bool(0.5) as u8))
        .collect();

    for (k, &bk) in b.iter().enumerate() {
        let j = rng.random_range(0..nc);
        let m = rng.random_range(2.0..8.0);
        let sense = if rng.random_bool(0.5) {
            Sense::Le
        } else {
            Sense::Ge
        };
        let (sign, rhs) = match sense {
            Sense::Le => (-m, 1.0),
            _ => (m, -1.0),
        };
        // y_j ≤ 1 + M b_k or y_j ≥ −1 − M b_k
        sys.add_row(
            format!("link{k}"),
            vec![(y[j], 1.0), (bk, sign)],
            sense,
            rhs,
        );
    }
    for r in 0..rng.random_range(1..=3) {
        let mut terms = Vec::new();
        let mut activity = 0.0;
        for j in 0..nc {
            let a = rng.random_range(-1.0..1.0);
            activity += a * y0[j];
            terms.push((y[j], a));
        }
        for k in 0..binaries {
            if rng.random_bool(0.4) {
                let a = rng.random_range(-2.0..2.0);
                activity += a * b0[k];
                terms.push((b[k], a));
            }
        }
        let slack = rng.random_range(-3.0..2.0);
        sys.add_row(format!("couple{r}"), terms, Sense::Le, activity + slack);
    }
    let mut obj = Objective::default();
    for &yj in &y {
        obj.add_square(yj, rng.random_range(-6.0..6.0), rng.random_range(0.1..2.0));
    }
    for &bk in &b {
        obj.linear.push((bk, rng.random_range(-1.0..3.0)));
    }
    sys.set_objective(obj);
    sys
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
