mod common;

use common::random_network;
use flmip::controllers::{
    ClfCbfController, ClfCbfSpec, CostMode, MpcController, MpcSpec, Reference, StepStatus,
};
use flmip::dynamics::BrunovskyModel;
use flmip::misolver::Budget;
use flmip::relu_net::{Layer, ReluNetwork};
use flmip::BoxDomain;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const P: [[f64; 2]; 2] = [[4.58, 10.0], [10.0, 45.83]];
const CENTER: [f64; 2] = [1.5, 1.0];
const TS: f64 = 0.01;

fn clf_spec(cost: CostMode) -> ClfCbfSpec {
    ClfCbfSpec {
        p: P.iter().map(|r| r.to_vec()).collect(),
        obstacle_center: CENTER.to_vec(),
        obstacle_radius: 0.8,
        kappa: 4.0,
        beta: 0.001,
        cost,
        feedback_gain: vec![vec![4.47, 3.37]],
    }
}

/// Network close to the mass-spring-damper map `v + z_2 + z_1` plus a small
/// random ReLU perturbation.
fn msd_like(seed: u64) -> ReluNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = random_network(&mut rng, 3, &[4], 1);
    let (l0, l1) = (&noise.layers()[0], &noise.layers()[1]);
    let mut rows: Vec<Vec<f64>> = (0..l0.outputs()).map(|j| l0.row(j).to_vec()).collect();
    let mut bias = l0.bias().to_vec();
    rows.push(vec![1.0, 1.0, 1.0]);
    rows.push(vec![-1.0, -1.0, -1.0]);
    bias.extend([0.0, 0.0]);
    let mut out: Vec<f64> = l1.row(0).iter().map(|w| 0.1 * w).collect();
    out.extend([1.0, -1.0]);
    ReluNetwork::new(vec![
        Layer::new(rows, bias).unwrap(),
        Layer::new(vec![out], vec![0.1 * l1.bias()[0]]).unwrap(),
    ])
    .unwrap()
}

fn clf_controller(net: ReluNetwork, cost: CostMode) -> ClfCbfController {
    ClfCbfController::new(
        clf_spec(cost),
        net,
        BrunovskyModel::chain(2, TS).unwrap(),
        BoxDomain::symmetric(&[10.0]).unwrap(),
        vec![4.5],
        Budget::default(),
    )
    .unwrap()
}

/// Independent evaluation of the one-step program at `(z, v)`: whether the
/// barrier and input constraints hold, and the objective with the smallest
/// admissible slack.
fn evaluate(net: &ReluNetwork, z: &[f64], v: f64, cost: CostMode) -> (bool, f64) {
    let dz = [z[1], v];
    let d = ((z[0] - CENTER[0]).powi(2) + (z[1] - CENTER[1]).powi(2)).sqrt();
    let h = d - 0.8;
    let hdot = ((z[0] - CENTER[0]) * dz[0] + (z[1] - CENTER[1]) * dz[1]) / d;
    let vz = (0..2)
        .map(|i| (0..2).map(|j| z[i] * P[i][j] * z[j]).sum::<f64>())
        .sum::<f64>();
    let vdot = (0..2)
        .map(|i| 2.0 * (0..2).map(|j| P[i][j] * z[j]).sum::<f64>() * dz[i])
        .sum::<f64>();
    let delta = (vdot + 0.001 * vz).max(0.0);
    let feasible =
        hdot >= -4.0 * h - 1e-7 && net.forward(&[z[0], z[1], v]).unwrap()[0].abs() <= 4.5 + 1e-7;
    let k = -(4.47 * z[0] + 3.37 * z[1]);
    let obj = match cost {
        CostMode::Qcost => (v - k).powi(2) + delta,
        CostMode::Lcost => vdot + delta,
    };
    (feasible, obj)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn clf_cbf_step_beats_a_dense_scan(
        seed in any::<u64>(), z0 in -3.0..3.0f64, z1 in -3.0..3.0f64, lcost in any::<bool>(),
    ) {
        let z = [z0, z1];
        prop_assume!(((z0 - CENTER[0]).powi(2) + (z1 - CENTER[1]).powi(2)).sqrt() > 0.85);
        let cost = if lcost { CostMode::Lcost } else { CostMode::Qcost };
        let net = msd_like(seed);
        let c = clf_controller(net.clone(), cost);
        let out = c.step(&z, None).unwrap();
        let scan: Vec<(bool, f64)> = (0..=4000).map(|i| evaluate(&net, &z, -10.0 + i as f64 * 0.005, cost)).collect();
        let best = scan.iter().filter(|(f, _)| *f).map(|(_, o)| *o).fold(f64::INFINITY, f64::min);
        if out.status == StepStatus::Infeasible {
            prop_assert!(best.is_infinite());
        } else {
            prop_assert_eq!(out.status, StepStatus::Optimal);
            let (feasible, obj) = evaluate(&net, &z, out.v[0], cost);
            prop_assert!(feasible);
            prop_assert!((obj - out.objective).abs() <= 1e-5 * (1.0 + obj.abs()), "{obj} vs {}", out.objective);
            prop_assert!(out.objective <= best + 1e-5 * (1.0 + best.abs()), "{} vs scan {best}", out.objective);
        }
    }

    #[test]
    fn mpc_plan_follows_the_sampled_chain(seed in any::<u64>(), z in prop::collection::vec(-1.0..1.0f64, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, 4, &[4, 4], 1);
        let ts = 0.1;
        let model = BrunovskyModel::chain(3, ts).unwrap();
        let spec = MpcSpec {
            horizon: 4,
            q: vec![vec![10.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            r: vec![vec![0.0175]],
            state_box: BoxDomain::symmetric(&[5.0, 5.0, 5.0]).unwrap(),
            reference: Reference::Constant { state: vec![0.5, 0.0, 0.0] },
        };
        let budget = 3.0;
        let c = MpcController::new(spec, net.clone(), &model, BoxDomain::symmetric(&[5.0]).unwrap(), vec![budget], Budget::default()).unwrap();
        let out = c.step(&z, 0.0, None).unwrap();
        prop_assume!(out.status != StepStatus::Infeasible);
        prop_assert_eq!(out.states.len(), 5);
        prop_assert_eq!(out.inputs.len(), 4);
        prop_assert_eq!(&out.v0, &out.inputs[0]);
        for k in 0..4 {
            let (s, v) = (&out.states[k], out.inputs[k][0]);
            let next = [
                s[0] + ts * s[1] + ts * ts / 2.0 * s[2] + ts.powi(3) / 6.0 * v,
                s[1] + ts * s[2] + ts * ts / 2.0 * v,
                s[2] + ts * v,
            ];
            for (a, b) in out.states[k + 1].iter().zip(next) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
            let phi = net.forward(&[s[0], s[1], s[2], v]).unwrap()[0];
            prop_assert!(phi.abs() <= budget * (1.0 + 1e-7) + 1e-7);
            prop_assert!((phi - out.phi_nn[k][0]).abs() <= 1e-6 * (1.0 + phi.abs()));
        }
    }
}

#[test]
fn program_holds_one_binary_per_hidden_node() {
    let net = msd_like(1);
    let c = clf_controller(net.clone(), CostMode::Qcost);
    let sys = c.program(&[0.0, 4.0]).unwrap();
    assert_eq!(sys.binary_count(), net.hidden_node_count());
}
