use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{step_status, StepStats, StepStatus, LOCAL_SEARCH_ROUNDS};
use crate::dynamics::BrunovskyModel;
use crate::encoder::{
    encode, fbbt, MiConstraintSystem, NetworkCompletion, NetworkEncoding, Objective, Sense, VarId,
};
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::misolver::{solve_mi, Budget, MiProblem, SolveOptions};
use crate::relu_net::ReluNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostMode {
    /// `J = ∇V(z)ᵀ(Az + Bv)`, a MILP.
    Lcost,
    /// `J = ‖v − k(z)‖²`, a MIQP.
    Qcost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfCbfSpec {
    /// `V(z) = zᵀPz`, row-major.
    pub p: Vec<Vec<f64>>,
    pub obstacle_center: Vec<f64>,
    pub obstacle_radius: f64,
    pub kappa: f64,
    pub beta: f64,
    pub cost: CostMode,
    /// `k(z) = −K z`, one row per input.
    pub feedback_gain: Vec<Vec<f64>>,
}

impl ClfCbfSpec {
    fn p_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.p.len();
        if self.p.iter().any(|r| r.len() != n) {
            return Err(Error::Config("P must be square".into()));
        }
        let p = DMatrix::from_fn(n, n, |i, j| self.p[i][j]);
        if (&p - p.transpose()).amax() > 1e-12 * p.amax().max(1.0) {
            return Err(Error::Config("P must be symmetric".into()));
        }
        if p.clone().cholesky().is_none() {
            return Err(Error::Config("P must be positive definite".into()));
        }
        Ok(p)
    }

    pub fn validate(&self, state_dim: usize, input_dim: usize) -> Result<()> {
        if self.p.len() != state_dim {
            return Err(Error::Dimension {
                context: "CLF matrix P",
                expected: state_dim,
                got: self.p.len(),
            });
        }
        self.p_matrix()?;
        if self.obstacle_center.len() != state_dim {
            return Err(Error::Dimension {
                context: "obstacle center",
                expected: state_dim,
                got: self.obstacle_center.len(),
            });
        }
        if !(self.obstacle_radius > 0.0) || !(self.kappa > 0.0) || !(self.beta > 0.0) {
            return Err(Error::Config("r_o, κ and β must be positive".into()));
        }
        if self.feedback_gain.len() != input_dim
            || self.feedback_gain.iter().any(|r| r.len() != state_dim)
        {
            return Err(Error::Config(format!(
                "feedback gain must be {input_dim} × {state_dim}"
            )));
        }
        Ok(())
    }

    /// `k(z) = −K z`.
    pub fn feedback(&self, z: &[f64]) -> Vec<f64> {
        self.feedback_gain
            .iter()
            .map(|row| -row.iter().zip(z).map(|(k, x)| k * x).sum::<f64>())
            .collect()
    }

    pub fn lyapunov(&self, z: &[f64]) -> f64 {
        let n = z.len();
        (0..n)
            .map(|i| (0..n).map(|j| z[i] * self.p[i][j] * z[j]).sum::<f64>())
            .sum()
    }

    pub fn barrier(&self, z: &[f64]) -> f64 {
        distance(z, &self.obstacle_center) - self.obstacle_radius
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClfCbfOutcome {
    pub status: StepStatus,
    /// Applied virtual input; empty when infeasible.
    pub v: Vec<f64>,
    pub delta: f64,
    pub objective: f64,
    /// Surrogate `Φ_NN(z, v)` at the returned point.
    pub phi_nn: Vec<f64>,
    pub stats: StepStats,
}

/// One-step CLF-CBF law over a fixed network and input budget.
pub struct ClfCbfController {
    spec: ClfCbfSpec,
    net: ReluNetwork,
    model: BrunovskyModel,
    input_box: BoxDomain,
    u_max_eff: Vec<f64>,
    budget: Budget,
}

struct Program {
    sys: MiConstraintSystem,
    enc: NetworkEncoding,
    v: Vec<VarId>,
    delta: VarId,
    /// `∇Vᵀ B`, the linear cost coefficient of `v` under Lcost.
    clf_row: Vec<f64>,
}

impl ClfCbfController {
    pub fn new(
        spec: ClfCbfSpec,
        net: ReluNetwork,
        model: BrunovskyModel,
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
            model,
            input_box,
            u_max_eff,
            budget,
        })
    }

    pub fn spec(&self) -> &ClfCbfSpec {
        &self.spec
    }

    /// The mixed-integer program solved at state `z`.
    pub fn program(&self, z: &[f64]) -> Result<MiConstraintSystem> {
        Ok(self.build(z)?.sys)
    }

    fn build(&self, z: &[f64]) -> Result<Program> {
        let n = z.len();
        let m = self.input_box.dim();
        let dist = distance(z, &self.spec.obstacle_center);
        if dist < 1e-9 {
            return Err(Error::Geometry(format!(
                "state {z:?} coincides with the obstacle center; the barrier gradient is undefined"
            )));
        }
        let domain = BoxDomain::point(z)?.product(&self.input_box);
        let bounds = fbbt(&self.net, &domain)?;
        let (mut sys, enc) = encode(&self.net, &bounds, &self.u_max_eff)?;
        let v: Vec<VarId> = enc.inputs[n..].to_vec();
        let delta = sys.add_continuous("delta", 0.0, f64::INFINITY);

        let zv = DVector::from_column_slice(z);
        let p = self.spec.p_matrix()?;
        let grad_v = 2.0 * &p * &zv;
        let grad_h = (&zv - DVector::from_column_slice(&self.spec.obstacle_center)) / dist;
        let az = &self.model.a * &zv;
        let clf_row: Vec<f64> = (0..m)
            .map(|j| grad_v.dot(&self.model.b.column(j)))
            .collect();
        let cbf_row: Vec<f64> = (0..m)
            .map(|j| grad_h.dot(&self.model.b.column(j)))
            .collect();
        let v_val = self.spec.lyapunov(z);
        let h_val = dist - self.spec.obstacle_radius;

        let mut terms: Vec<(VarId, f64)> = v.iter().copied().zip(clf_row.iter().copied()).collect();
        terms.push((delta, -1.0));
        sys.add_row(
            "clf",
            terms,
            Sense::Le,
            -self.spec.beta * v_val - grad_v.dot(&az),
        );
        sys.add_row(
            "cbf",
            v.iter().copied().zip(cbf_row.iter().copied()).collect(),
            Sense::Ge,
            -self.spec.kappa * h_val - grad_h.dot(&az),
        );

        let mut obj = Objective::default();
        match self.spec.cost {
            CostMode::Lcost => {
                obj.linear
                    .extend(v.iter().copied().zip(clf_row.iter().copied()));
                obj.constant += grad_v.dot(&az);
            }
            CostMode::Qcost => {
                for (var, target) in v.iter().zip(self.spec.feedback(z)) {
                    obj.add_square(*var, target, 1.0);
                }
            }
        }
        obj.linear.push((delta, 1.0));
        sys.set_objective(obj);
        Ok(Program {
            sys,
            enc,
            v,
            delta,
            clf_row,
        })
    }

    /// Full assignment for input `v`: network completed, `δ` at its
    /// smallest admissible value.
    fn candidate(&self, prog: &Program, v: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = prog
            .sys
            .variables()
            .iter()
            .map(|var| var.lower.max(0.0).min(var.upper))
            .collect();
        for (var, val) in prog.v.iter().zip(v) {
            x[var.0] = *val;
        }
        prog.enc.complete(&self.net, &prog.sys, &mut x);
        let clf = prog
            .sys
            .rows()
            .iter()
            .find(|r| r.name == "clf")
            .expect("clf row");
        x[prog.delta.0] = 0.0;
        x[prog.delta.0] = (clf.activity(&x) - clf.rhs).max(0.0);
        x
    }

    /// Solves the program at state `z`. The clamped feedback `k(z)`, the zero
    /// input and `previous` (last applied input) are tried as incumbents.
    pub fn step(&self, z: &[f64], previous: Option<&[f64]>) -> Result<ClfCbfOutcome> {
        let prog = self.build(z)?;
        let mut k = self.spec.feedback(z);
        self.input_box.clamp(&mut k);
        let mut starts: Vec<Vec<f64>> = vec![k, vec![0.0; self.input_box.dim()]];
        if let Some(p) = previous {
            starts.push(p.to_vec());
        }
        let warm = starts
            .iter()
            .map(|v| self.candidate(&prog, v))
            .filter(|x| prog.sys.is_feasible(x))
            .min_by(|a, b| {
                prog.sys
                    .objective_value(a)
                    .total_cmp(&prog.sys.objective_value(b))
            });

        let problem = MiProblem::new(prog.sys.clone())?;
        let completion = NetworkCompletion {
            net: &self.net,
            encoding: &prog.enc,
            system: &prog.sys,
        };
        let opts = SolveOptions {
            budget: self.budget,
            warm_start: warm,
            completion: Some(&completion),
            local_search: LOCAL_SEARCH_ROUNDS,
            ..SolveOptions::default()
        };
        let mut sol = solve_mi(&problem, &opts)?;
        let binaries = prog.sys.binary_count();
        let free = prog.sys.free_binary_count();
        let mut stats = StepStats::from_solution(&sol, binaries, free);

        // A flat Lcost objective leaves v undetermined; take the smallest
        // input among the optimal ones.
        let flat = prog.clf_row.iter().all(|c| c.abs() <= 1e-12);
        if self.spec.cost == CostMode::Lcost && flat && sol.has_incumbent() {
            let mut secondary = prog.sys.clone();
            let level = sol.objective + 1e-9 * sol.objective.abs().max(1.0);
            let obj = secondary.objective().clone();
            let mut terms = obj.linear.clone();
            terms.retain(|(_, c)| *c != 0.0);
            secondary.add_row("lex_level", terms, Sense::Le, level - obj.constant);
            let mut tie = Objective::default();
            for var in &prog.v {
                tie.add_square(*var, 0.0, 1.0);
            }
            secondary.set_objective(tie);
            let problem = MiProblem::new(secondary)?;
            let opts = SolveOptions {
                budget: self.budget,
                warm_start: Some(sol.values.clone()),
                completion: Some(&completion),
                local_search: LOCAL_SEARCH_ROUNDS,
                ..SolveOptions::default()
            };
            let tie_sol = solve_mi(&problem, &opts)?;
            stats.nodes += tie_sol.nodes;
            stats.relaxations += tie_sol.relaxations;
            stats.solve_time += tie_sol.wall_time;
            if tie_sol.has_incumbent() {
                let objective = prog.sys.objective_value(&tie_sol.values);
                sol.values = tie_sol.values;
                sol.objective = objective;
            }
        }

        let status = step_status(&sol);
        if status == StepStatus::Infeasible {
            return Ok(ClfCbfOutcome {
                status,
                v: Vec::new(),
                delta: f64::NAN,
                objective: f64::INFINITY,
                phi_nn: Vec::new(),
                stats,
            });
        }
        let x = &sol.values;
        Ok(ClfCbfOutcome {
            status,
            v: prog.v.iter().map(|var| x[var.0]).collect(),
            delta: x[prog.delta.0],
            objective: sol.objective,
            phi_nn: prog.enc.outputs.iter().map(|var| x[var.0]).collect(),
            stats,
        })
    }
}
