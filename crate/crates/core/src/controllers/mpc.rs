use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{step_status, Reference, StepStats, StepStatus, LOCAL_SEARCH_ROUNDS};
use crate::dynamics::BrunovskyModel;
use crate::encoder::{
    fbbt, replicate_over_horizon, stage_input_boxes, HorizonCompletion, HorizonEncoding,
    HorizonLink, MiConstraintSystem, NodeBounds, Objective, VarId,
};
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::misolver::{solve_mi, Budget, Completion, MiProblem, SolveOptions};
use crate::relu_net::ReluNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSpec {
    pub horizon: usize,
    /// Stage state weight, row-major.
    pub q: Vec<Vec<f64>>,
    /// Stage input weight, row-major.
    pub r: Vec<Vec<f64>>,
    pub state_box: BoxDomain,
    pub reference: Reference,
}

fn square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be {n} × {n}")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::Config(format!("{what} must be symmetric")));
    }
    Ok(m)
}

impl MpcSpec {
    pub fn validate(&self, state_dim: usize, input_dim: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("MPC horizon must be at least 1".into()));
        }
        let q = square(&self.q, state_dim, "Q")?;
        if q.symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::Config("Q must be positive semidefinite".into()));
        }
        let r = square(&self.r, input_dim, "R")?;
        if r.cholesky().is_none() {
            return Err(Error::Config("R must be positive definite".into()));
        }
        if self.state_box.dim() != state_dim
            || self
                .state_box
                .lower
                .iter()
                .chain(&self.state_box.upper)
                .any(|b| !b.is_finite())
        {
            return Err(Error::Config(
                "X_z must be a finite box over the state".into(),
            ));
        }
        self.reference.validate(state_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutcome {
    pub status: StepStatus,
    /// First input of the optimal sequence; empty when infeasible.
    pub v0: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    /// Predicted `z_0 … z_{N_p}`.
    pub states: Vec<Vec<f64>>,
    /// `Φ_NN(z_k, v_k)` on every predicted stage.
    pub phi_nn: Vec<Vec<f64>>,
    pub objective: f64,
    pub stats: StepStats,
    /// Whether the previous plan, shifted by one stage, satisfied the first
    /// `N_p − 1` stages at this step.
    pub shift_feasible: Option<bool>,
    /// First violated constraint of a trial point when infeasible.
    pub diagnostic: Option<String>,
}

pub struct MpcController {
    spec: MpcSpec,
    net: ReluNetwork,
    link: HorizonLink,
    sample_time: f64,
    input_box: BoxDomain,
    u_max_eff: Vec<f64>,
    budget: Budget,
}

struct Program {
    sys: MiConstraintSystem,
    enc: HorizonEncoding,
}

impl MpcController {
    pub fn new(
        spec: MpcSpec,
        net: ReluNetwork,
        model: &BrunovskyModel,
        input_box: BoxDomain,
        u_max_eff: Vec<f64>,
        budget: Budget,
    ) -> Result<Self> {
        let n = model.state_dim();
        let m = model.b.ncols();
        spec.validate(n, m)?;
        if net.input_dim() != n + m || net.output_dim() != u_max_eff.len() || input_box.dim() != m {
            return Err(Error::Config(
                "network, input box and budget dimensions disagree".into(),
            ));
        }
        Ok(Self {
            spec,
            net,
            link: HorizonLink {
                a_d: model.a_d.clone(),
                b_d: model.b_d.clone(),
            },
            sample_time: model.sample_time,
            input_box,
            u_max_eff,
            budget,
        })
    }

    pub fn spec(&self) -> &MpcSpec {
        &self.spec
    }

    pub fn link(&self) -> &HorizonLink {
        &self.link
    }

    /// Per-stage node bounds from interval reachability of `z`.
    pub fn stage_bounds(&self, z: &[f64]) -> Result<Vec<NodeBounds>> {
        stage_input_boxes(
            z,
            self.spec.horizon,
            &self.link,
            &self.spec.state_box,
            &self.input_box,
        )
        .iter()
        .map(|b| fbbt(&self.net, b))
        .collect()
    }

    /// The MIQP solved at state `z` and time `t`.
    pub fn build(&self, z: &[f64], t: f64) -> Result<(MiConstraintSystem, HorizonEncoding)> {
        let bounds = self.stage_bounds(z)?;
        let (mut sys, enc) = replicate_over_horizon(
            &self.net,
            &bounds,
            &self.link,
            &self.spec.state_box,
            &self.u_max_eff,
        )?;
        let n = self.link.state_dim();
        let m = self.link.input_dim();
        let mut obj = Objective::default();
        for k in 1..=self.spec.horizon {
            let state = enc.stages.get(k).map_or(&enc.terminal, |s| &s.state);
            let target = self.spec.reference.at(t + k as f64 * self.sample_time);
            add_quadratic(&mut obj, state, &target, &self.spec.q, n);
        }
        for stage in &enc.stages {
            add_quadratic(&mut obj, &stage.input, &vec![0.0; m], &self.spec.r, m);
        }
        sys.set_objective(obj);
        Ok((sys, enc))
    }

    fn candidate(&self, prog: &Program, inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut x: Vec<f64> = prog
            .sys
            .variables()
            .iter()
            .map(|v| v.lower.max(0.0).min(v.upper))
            .collect();
        for (stage, v) in prog.enc.stages.iter().zip(inputs) {
            for (var, val) in stage.input.iter().zip(v) {
                x[var.0] = *val;
            }
        }
        HorizonCompletion {
            net: &self.net,
            encoding: &prog.enc,
            link: &self.link,
            system: &prog.sys,
        }
        .complete(&mut x);
        x
    }

    /// Does `x` respect the budget on stages `0 … N_p − 2` and `X_z` on
    /// states `1 … N_p − 1`?
    fn leading_stages_feasible(&self, prog: &Program, x: &[f64]) -> bool {
        let stages = &prog.enc.stages;
        let last = stages.len().saturating_sub(1);
        let tol = 1e-9;
        let outputs_ok = stages[..last].iter().all(|s| {
            s.net
                .outputs
                .iter()
                .zip(&self.u_max_eff)
                .all(|(var, u)| x[var.0].abs() <= u + tol)
        });
        let states_ok = stages[1..].iter().take(last).all(|s| {
            let z: Vec<f64> = s.state.iter().map(|v| x[v.0]).collect();
            self.spec.state_box.contains(&z, tol)
        });
        outputs_ok && states_ok
    }

    /// Solves the horizon problem at state `z`, time `t`. `previous` is the
    /// input sequence of the last step; shifted by one stage it seeds the
    /// incumbent.
    pub fn step(&self, z: &[f64], t: f64, previous: Option<&[Vec<f64>]>) -> Result<MpcOutcome> {
        let n = self.link.state_dim();
        let m = self.link.input_dim();
        if z.len() != n {
            return Err(Error::Dimension {
                context: "MPC state",
                expected: n,
                got: z.len(),
            });
        }
        if !self.spec.state_box.contains(z, 0.0) {
            return Ok(infeasible(
                StepStats::default(),
                None,
                format!("state {z:?} is outside X_z"),
            ));
        }
        let (sys, enc) = self.build(z, t)?;
        let prog = Program { sys, enc };
        let np = self.spec.horizon;

        let mut trials: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut shift_feasible = None;
        if let Some(prev) = previous.filter(|p| p.len() == np) {
            let mut shifted: Vec<Vec<f64>> = prev[1..].to_vec();
            shifted.push(prev[np - 1].clone());
            let x = self.candidate(&prog, &shifted);
            shift_feasible = Some(self.leading_stages_feasible(&prog, &x));
            trials.push(shifted);
        }
        trials.push(vec![vec![0.0; m]; np]);
        let candidates: Vec<Vec<f64>> = trials.iter().map(|u| self.candidate(&prog, u)).collect();
        let warm = candidates
            .iter()
            .filter(|x| prog.sys.is_feasible(x))
            .min_by(|a, b| {
                prog.sys
                    .objective_value(a)
                    .total_cmp(&prog.sys.objective_value(b))
            })
            .cloned();

        let problem = MiProblem::new(prog.sys.clone())?;
        let completion = HorizonCompletion {
            net: &self.net,
            encoding: &prog.enc,
            link: &self.link,
            system: &prog.sys,
        };
        let opts = SolveOptions {
            budget: self.budget,
            warm_start: warm,
            completion: Some(&completion),
            local_search: LOCAL_SEARCH_ROUNDS,
            ..SolveOptions::default()
        };
        let sol = solve_mi(&problem, &opts)?;
        let stats =
            StepStats::from_solution(&sol, prog.sys.binary_count(), prog.sys.free_binary_count());
        let status = step_status(&sol);
        if status == StepStatus::Infeasible {
            let diagnostic = candidates
                .iter()
                .find_map(|x| prog.sys.check(x, 1e-7, 1e-6).err())
                .map_or_else(|| "no feasible point found".to_string(), |e| e.to_string());
            return Ok(infeasible(stats, shift_feasible, diagnostic));
        }
        let x = &sol.values;
        let read = |vars: &[VarId]| vars.iter().map(|v| x[v.0]).collect::<Vec<f64>>();
        let inputs = prog.enc.inputs(x);
        Ok(MpcOutcome {
            status,
            v0: inputs[0].clone(),
            inputs,
            states: prog.enc.states(x),
            phi_nn: prog
                .enc
                .stages
                .iter()
                .map(|s| read(&s.net.outputs))
                .collect(),
            objective: sol.objective,
            stats,
            shift_feasible,
            diagnostic: None,
        })
    }
}

fn infeasible(stats: StepStats, shift_feasible: Option<bool>, diagnostic: String) -> MpcOutcome {
    MpcOutcome {
        status: StepStatus::Infeasible,
        v0: Vec::new(),
        inputs: Vec::new(),
        states: Vec::new(),
        phi_nn: Vec::new(),
        objective: f64::INFINITY,
        stats,
        shift_feasible,
        diagnostic: Some(diagnostic),
    }
}

/// Adds `(x − target)ᵀ W (x − target)`.
fn add_quadratic(obj: &mut Objective, vars: &[VarId], target: &[f64], w: &[Vec<f64>], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let wij = w[i][j];
            if wij == 0.0 {
                continue;
            }
            obj.quadratic.push((vars[i], vars[j], wij));
            obj.linear.push((vars[i], -2.0 * wij * target[j]));
            obj.constant += wij * target[i] * target[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_net::Layer;

    /// `Φ_NN(z, v) = v` through one hidden layer of two units.
    fn identity_net(n: usize) -> ReluNetwork {
        let mut up = vec![0.0; n + 1];
        up[n] = 1.0;
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        ReluNetwork::new(vec![
            Layer::new(vec![up, down], vec![0.0, 0.0]).unwrap(),
            Layer::new(vec![vec![1.0, -1.0]], vec![0.0]).unwrap(),
        ])
        .unwrap()
    }

    fn controller(horizon: usize, reference: Reference) -> MpcController {
        let model = BrunovskyModel::chain(3, 0.1).unwrap();
        let spec = MpcSpec {
            horizon,
            q: vec![
                vec![10.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            r: vec![vec![0.0175]],
            state_box: BoxDomain::symmetric(&[5.0; 3]).unwrap(),
            reference,
        };
        MpcController::new(
            spec,
            identity_net(3),
            &model,
            BoxDomain::symmetric(&[15.0]).unwrap(),
            vec![2.0],
            Budget::default(),
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_stays_put() {
        let c = controller(
            4,
            Reference::Constant {
                state: vec![0.0; 3],
            },
        );
        let out = c.step(&[0.0; 3], 0.0, None).unwrap();
        assert_eq!(out.status, StepStatus::Optimal);
        assert!(out.objective.abs() < 1e-8);
        assert!(out.inputs.iter().flatten().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn one_step_horizon_matches_scalar_qp() {
        let c = controller(
            1,
            Reference::Constant {
                state: vec![1.0, 0.0, 0.0],
            },
        );
        let z = [0.2, -0.1, 0.3];
        let out = c.step(&z, 0.0, None).unwrap();
        // z₁ = A_d z + B_d v is affine in v: minimize ‖g + h v − r‖²_Q + R v²
        // over |v| ≤ 2 in closed form.
        let g = c.link.step(&z, &[0.0]);
        let h: Vec<f64> = (0..3).map(|i| c.link.b_d[(i, 0)]).collect();
        let q = [10.0, 1.0, 1.0];
        let r = [1.0, 0.0, 0.0];
        let num: f64 = (0..3).map(|i| q[i] * h[i] * (r[i] - g[i])).sum();
        let den: f64 = (0..3).map(|i| q[i] * h[i] * h[i]).sum::<f64>() + 0.0175;
        let v = (num / den).clamp(-2.0, 2.0);
        assert!((out.v0[0] - v).abs() < 1e-6, "{} vs {v}", out.v0[0]);
    }

    #[test]
    fn budget_binds_every_stage() {
        let c = controller(
            5,
            Reference::Constant {
                state: vec![4.0, 0.0, 0.0],
            },
        );
        let out = c.step(&[0.0; 3], 0.0, None).unwrap();
        assert_eq!(out.status, StepStatus::Optimal);
        for phi in &out.phi_nn {
            assert!(phi[0].abs() <= 2.0 + 1e-7);
        }
        assert!((out.v0[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn state_outside_box_is_infeasible() {
        let c = controller(
            2,
            Reference::Constant {
                state: vec![0.0; 3],
            },
        );
        let out = c.step(&[6.0, 0.0, 0.0], 0.0, None).unwrap();
        assert_eq!(out.status, StepStatus::Infeasible);
        assert!(out.diagnostic.unwrap().contains("outside"));
    }
}
