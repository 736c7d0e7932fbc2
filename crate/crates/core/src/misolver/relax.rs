use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use crate::encoder::{MiConstraintSystem, Sense};
use crate::error::{Error, Result};

const IPM_TOL: f64 = 1e-10;
/// Residual level at which a stalled interior-point iterate is still accepted.
const STALL_TOL: f64 = 1e-7;
/// Rows whose free part vanished are checked directly with this slack.
const CONSTANT_ROW_TOL: f64 = 1e-9;

/// Continuous optimum of a relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedPoint {
    /// Full assignment, fixed variables included.
    pub x: Vec<f64>,
    /// Objective of the system at `x`.
    pub objective: f64,
    /// Lower bound on the relaxation optimum (dual objective, capped by
    /// `objective`).
    pub bound: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Relaxation {
    Optimal(RelaxedPoint),
    Infeasible,
}

impl Relaxation {
    pub fn point(&self) -> Option<&RelaxedPoint> {
        match self {
            Relaxation::Optimal(p) => Some(p),
            Relaxation::Infeasible => None,
        }
    }
}

/// Solves the continuous relaxation of `sys`: binaries range over `[0, 1]`
/// (or stay at their fixing).
pub fn solve_relaxation(sys: &MiConstraintSystem) -> Result<Relaxation> {
    let lower: Vec<f64> = sys.variables().iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = sys.variables().iter().map(|v| v.upper).collect();
    relax(sys, &lower, &upper)
}

/// Relaxation of `sys` under overriding variable bounds. Variables with equal
/// bounds are substituted out before the conic solve.
pub(crate) fn relax(sys: &MiConstraintSystem, lower: &[f64], upper: &[f64]) -> Result<Relaxation> {
    let n = sys.num_variables();
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Ok(Relaxation::Infeasible);
    }

    let mut column = vec![usize::MAX; n];
    let mut free = Vec::new();
    for i in 0..n {
        if lower[i] < upper[i] {
            column[i] = free.len();
            free.push(i);
        }
    }
    let mut x: Vec<f64> = (0..n)
        .map(|i| if lower[i] == upper[i] { lower[i] } else { 0.0 })
        .collect();

    // Equalities first (zero cone), then `≤` rows (nonnegative cone).
    let mut eq = RowBlock::default();
    let mut ineq = RowBlock::default();
    for row in sys.rows() {
        let mut constant = 0.0;
        let mut terms = Vec::with_capacity(row.terms.len());
        for (v, c) in &row.terms {
            if column[v.0] == usize::MAX {
                constant += c * x[v.0];
            } else if *c != 0.0 {
                terms.push((column[v.0], *c));
            }
        }
        let rhs = row.rhs - constant;
        if terms.is_empty() {
            let tol = CONSTANT_ROW_TOL * (1.0 + row.rhs.abs() + constant.abs());
            let ok = match row.sense {
                Sense::Le => rhs >= -tol,
                Sense::Ge => rhs <= tol,
                Sense::Eq => rhs.abs() <= tol,
            };
            if !ok {
                return Ok(Relaxation::Infeasible);
            }
            continue;
        }
        match row.sense {
            Sense::Eq => eq.push(&terms, 1.0, rhs),
            Sense::Le => ineq.push(&terms, 1.0, rhs),
            Sense::Ge => ineq.push(&terms, -1.0, -rhs),
        }
    }
    for (col, &i) in free.iter().enumerate() {
        if upper[i].is_finite() {
            ineq.push(&[(col, 1.0)], 1.0, upper[i]);
        }
        if lower[i].is_finite() {
            ineq.push(&[(col, -1.0)], 1.0, -lower[i]);
        }
    }

    let obj = sys.objective();
    let mut q = vec![0.0; free.len()];
    let mut constant = obj.constant;
    for (v, c) in &obj.linear {
        match column[v.0] {
            usize::MAX => constant += c * x[v.0],
            j => q[j] += c,
        }
    }
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (a, b, w) in &obj.quadratic {
        match (column[a.0], column[b.0]) {
            (usize::MAX, usize::MAX) => constant += w * x[a.0] * x[b.0],
            (usize::MAX, j) => q[j] += w * x[a.0],
            (j, usize::MAX) => q[j] += w * x[b.0],
            (ja, jb) if ja == jb => {
                pi.push(ja);
                pj.push(ja);
                pv.push(2.0 * w);
            }
            (ja, jb) => {
                pi.push(ja.min(jb));
                pj.push(ja.max(jb));
                pv.push(*w);
            }
        }
    }

    if free.is_empty() {
        let objective = sys.objective_value(&x);
        return Ok(Relaxation::Optimal(RelaxedPoint {
            x,
            objective,
            bound: objective,
            iterations: 0,
        }));
    }

    let m_eq = eq.b.len();
    let m = m_eq + ineq.b.len();
    let mut ai = eq.i;
    ai.extend(ineq.i.iter().map(|r| r + m_eq));
    let mut aj = eq.j;
    aj.extend(ineq.j);
    let mut av = eq.v;
    av.extend(ineq.v);
    let mut b = eq.b;
    b.extend(ineq.b);

    let dim = free.len();
    let p_mat = CscMatrix::new_from_triplets(dim, dim, pi, pj, pv);
    let a_mat = CscMatrix::new_from_triplets(m, dim, ai, aj, av.clone());
    let mut cones = Vec::new();
    if m_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(m_eq));
    }
    if m > m_eq {
        cones.push(SupportedConeT::NonnegativeConeT(m - m_eq));
    }

    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: IPM_TOL,
        tol_gap_rel: IPM_TOL,
        tol_feas: IPM_TOL,
        tol_infeas_abs: 1e-10,
        tol_infeas_rel: 1e-10,
        tol_ktratio: 1e-8,
        max_iter: 200,
        max_threads: 1,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("relaxation setup: {e}")))?;
    solver.solve();
    if !matches!(
        solver.solution.status,
        SolverStatus::Solved
            | SolverStatus::AlmostSolved
            | SolverStatus::PrimalInfeasible
            | SolverStatus::AlmostPrimalInfeasible
    ) {
        // retry with looser infeasibility tolerances
        let settings = DefaultSettings {
            verbose: false,
            max_iter: 400,
            max_threads: 1,
            ..DefaultSettings::default()
        };
        solver = DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("relaxation setup: {e}")))?;
        solver.solve();
    }
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        SolverStatus::MaxIterations | SolverStatus::InsufficientProgress
            if sol.r_prim <= STALL_TOL && sol.r_dual <= STALL_TOL => {}
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Ok(Relaxation::Infeasible)
        }
        status => {
            let (amin, amax) = av
                .iter()
                .filter(|v| **v != 0.0)
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
                    (lo.min(v.abs()), hi.max(v.abs()))
                });
            return Err(Error::Solver(format!(
                "relaxation ended with {status:?} after {} iterations \
                 (primal residual {:.2e}, dual residual {:.2e}, {dim} columns, {m} rows, \
                 coefficient range [{amin:.2e}, {amax:.2e}])",
                sol.iterations, sol.r_prim, sol.r_dual
            )));
        }
    }
    for (col, &i) in free.iter().enumerate() {
        x[i] = sol.x[col].clamp(lower[i], upper[i]);
    }
    let objective = sys.objective_value(&x);
    let bound = (sol.obj_val_dual + constant).min(objective);
    Ok(Relaxation::Optimal(RelaxedPoint {
        x,
        objective,
        bound,
        iterations: sol.iterations,
    }))
}

#[derive(Default)]
struct RowBlock {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl RowBlock {
    fn push(&mut self, terms: &[(usize, f64)], sign: f64, rhs: f64) {
        let r = self.b.len();
        for (j, c) in terms {
            self.i.push(r);
            self.j.push(*j);
            self.v.push(sign * c);
        }
        self.b.push(rhs);
    }
}
