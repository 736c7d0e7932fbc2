//! Control laws built on the encoded input constraint
//! `|Φ_NN(z, v)| ≤ u_max − ε`: a one-step CLF-CBF program and a
//! receding-horizon MPC.

mod clf_cbf;
mod mpc;
mod reference;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::misolver::{MiSolution, MiStatus};

pub use clf_cbf::{ClfCbfController, ClfCbfOutcome, ClfCbfSpec, CostMode};
pub use mpc::{MpcController, MpcOutcome, MpcSpec};
pub use reference::Reference;

/// Flip-and-polish rounds the solver runs on each improved incumbent.
const LOCAL_SEARCH_ROUNDS: usize = 50;

/// How a controller step ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Optimal,
    /// Budget ran out; the best feasible point found is applied.
    Suboptimal,
    Infeasible,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub nodes: usize,
    pub relaxations: usize,
    pub solve_time: Duration,
    pub binaries: usize,
    pub free_binaries: usize,
    pub gap: f64,
}

impl StepStats {
    fn from_solution(sol: &MiSolution, binaries: usize, free_binaries: usize) -> Self {
        Self {
            nodes: sol.nodes,
            relaxations: sol.relaxations,
            solve_time: sol.wall_time,
            binaries,
            free_binaries,
            gap: if sol.gap().is_finite() {
                sol.gap()
            } else {
                0.0
            },
        }
    }
}

fn step_status(sol: &MiSolution) -> StepStatus {
    match sol.status {
        MiStatus::Optimal => StepStatus::Optimal,
        MiStatus::BudgetExhausted if sol.has_incumbent() => StepStatus::Suboptimal,
        _ => StepStatus::Infeasible,
    }
}
