//! Branch-and-bound over activation binaries.
//!
//! Each node solves the continuous relaxation of the system with some
//! binaries fixed. Nodes are explored best-first; a primal [`Completion`]
//! can turn a relaxation point into a feasible assignment so that most
//! nodes close without branching.

mod relax;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::encoder::{MiConstraintSystem, VarId, VarKind, FEASIBILITY_TOL, INTEGRALITY_TOL};
use crate::error::{Error, Result};

pub use relax::{solve_relaxation, Relaxation, RelaxedPoint};

/// Repairs a relaxation point into a candidate assignment, typically by
/// recomputing every network node from the input variables. Returns `false`
/// when no candidate could be produced.
pub trait Completion {
    fn complete(&self, x: &mut [f64]) -> bool;
}

/// A validated mixed-integer program.
#[derive(Debug, Clone)]
pub struct MiProblem {
    system: MiConstraintSystem,
}

impl MiProblem {
    /// Checks bounds, binary domains and convexity of the objective.
    pub fn new(system: MiConstraintSystem) -> Result<Self> {
        for v in system.variables() {
            if v.lower.is_nan() || v.upper.is_nan() {
                return Err(Error::Argument(format!(
                    "variable {} has a NaN bound",
                    v.name
                )));
            }
            if v.kind == VarKind::Binary {
                let ok = (v.lower == 0.0 || v.lower == 1.0) && (v.upper == 0.0 || v.upper == 1.0);
                if !ok {
                    return Err(Error::Argument(format!(
                        "binary {} has bounds [{}, {}]",
                        v.name, v.lower, v.upper
                    )));
                }
            }
        }
        for r in system.rows() {
            if !r.rhs.is_finite() || r.terms.iter().any(|(_, c)| !c.is_finite()) {
                return Err(Error::Argument(format!(
                    "row {} has non-finite data",
                    r.name
                )));
            }
            if let Some((v, _)) = r.terms.iter().find(|(v, _)| v.0 >= system.num_variables()) {
                return Err(Error::Argument(format!(
                    "row {} references unknown variable {}",
                    r.name, v.0
                )));
            }
        }
        check_convex(&system)?;
        Ok(Self { system })
    }

    pub fn system(&self) -> &MiConstraintSystem {
        &self.system
    }

    pub fn into_system(self) -> MiConstraintSystem {
        self.system
    }
}

/// Rejects objectives whose quadratic form is not positive semidefinite.
fn check_convex(sys: &MiConstraintSystem) -> Result<()> {
    let quad = &sys.objective().quadratic;
    if quad.is_empty() {
        return Ok(());
    }
    let mut vars: Vec<usize> = quad.iter().flat_map(|(a, b, _)| [a.0, b.0]).collect();
    vars.sort_unstable();
    vars.dedup();
    let pos = |v: VarId| vars.binary_search(&v.0).unwrap();
    let k = vars.len();
    let mut h = DMatrix::<f64>::zeros(k, k);
    for (a, b, w) in quad {
        if !w.is_finite() {
            return Err(Error::Argument("non-finite quadratic coefficient".into()));
        }
        let (i, j) = (pos(*a), pos(*b));
        h[(i, j)] += 0.5 * w;
        h[(j, i)] += 0.5 * w;
    }
    let eig = h.symmetric_eigen().eigenvalues;
    let scale = eig.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-9 * scale {
        return Err(Error::Argument(format!(
            "quadratic objective is not positive semidefinite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiStatus {
    Optimal,
    Infeasible,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Budget {
    /// Branching stops once this many nodes were solved. Both children of
    /// an expansion are solved, so the count can end one above the limit.
    pub max_nodes: Option<usize>,
    pub time_limit: Option<Duration>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceEvent {
    Incumbent {
        node: usize,
        objective: f64,
    },
    Pruned {
        node: usize,
        bound: f64,
        incumbent: f64,
    },
}

pub struct SolveOptions<'a> {
    pub budget: Budget,
    /// Relative optimality gap at which nodes are pruned.
    pub relative_gap: f64,
    /// Candidate assignment checked before the search starts.
    pub warm_start: Option<Vec<f64>>,
    pub completion: Option<&'a dyn Completion>,
    /// Rounds of flip-and-polish local search run on every improved
    /// incumbent; 0 disables it.
    pub local_search: usize,
    pub record_trace: bool,
}

impl Default for SolveOptions<'_> {
    fn default() -> Self {
        Self {
            budget: Budget::default(),
            relative_gap: 1e-6,
            warm_start: None,
            completion: None,
            local_search: 0,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiSolution {
    pub status: MiStatus,
    /// Best assignment found; empty when there is none.
    pub values: Vec<f64>,
    /// Objective of `values`, `+∞` when there is none.
    pub objective: f64,
    /// Proven lower bound on the optimum.
    pub bound: f64,
    pub nodes: usize,
    pub relaxations: usize,
    pub wall_time: Duration,
    pub trace: Vec<TraceEvent>,
}

impl MiSolution {
    pub fn has_incumbent(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn gap(&self) -> f64 {
        if self.has_incumbent() {
            (self.objective - self.bound).max(0.0)
        } else {
            f64::INFINITY
        }
    }
}

struct Node {
    bound: f64,
    depth: usize,
    id: usize,
    fixings: Vec<(VarId, f64)>,
    branch: VarId,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: smallest bound first, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    sys: &'a MiConstraintSystem,
    opts: &'a SolveOptions<'a>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    incumbent: Option<(Vec<f64>, f64)>,
    relaxations: usize,
    trace: Vec<TraceEvent>,
    /// Smallest parent bound of nodes whose relaxation failed numerically.
    lost_bound: f64,
    /// Rows touching each binary, for the local search.
    rows_of: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn incumbent_value(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |(_, v)| *v)
    }

    fn prunable(&self, bound: f64) -> bool {
        let inc = self.incumbent_value();
        inc.is_finite() && bound >= inc - self.opts.relative_gap * inc.abs().max(1.0)
    }

    fn offer(&mut self, x: Vec<f64>, node: usize) {
        if !self.sys.is_feasible(&x) {
            return;
        }
        let value = self.sys.objective_value(&x);
        if value < self.incumbent_value() {
            if self.opts.record_trace {
                self.trace.push(TraceEvent::Incumbent {
                    node,
                    objective: value,
                });
            }
            self.incumbent = Some((x, value));
        }
    }

    fn solve_node(&mut self, fixings: &[(VarId, f64)]) -> Result<Relaxation> {
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        for (v, val) in fixings {
            lower[v.0] = *val;
            upper[v.0] = *val;
        }
        self.relaxations += 1;
        relax::relax(self.sys, &lower, &upper)
    }

    /// Rounds the binaries of `x`, fixes them and re-solves the continuous
    /// part; offers the result as a candidate.
    fn polish(&mut self, x: &[f64], node: usize) -> Result<()> {
        let fixings: Vec<(VarId, f64)> = self
            .sys
            .free_binaries()
            .into_iter()
            .map(|v| (v, x[v.0].round().clamp(0.0, 1.0)))
            .collect();
        if let Relaxation::Optimal(p) = self.solve_node(&fixings)? {
            self.offer(p.x, node);
        }
        Ok(())
    }

    /// From the incumbent, alternately flips every binary whose flip keeps
    /// the point feasible and re-polishes, while the objective improves.
    /// For a ReLU encoding the flippable binaries are the nodes sitting at
    /// zero pre-activation, so each round moves into adjacent linear regions.
    fn local_search(&mut self, node: usize) -> Result<()> {
        let Some((mut x, _)) = self.incumbent.clone() else {
            return Ok(());
        };
        let binaries = self.sys.free_binaries();
        let mut value = f64::INFINITY;
        for _ in 0..self.opts.local_search {
            let fixings: Vec<(VarId, f64)> = binaries
                .iter()
                .map(|b| (*b, x[b.0].round().clamp(0.0, 1.0)))
                .collect();
            let Relaxation::Optimal(p) = self.solve_node(&fixings)? else {
                break;
            };
            let new_value = self.sys.objective_value(&p.x);
            self.offer(p.x.clone(), node);
            if !(new_value < value - 1e-9 * new_value.abs().max(1.0)) {
                break;
            }
            value = new_value;
            x = p.x;
            let mut flipped = false;
            for b in &binaries {
                x[b.0] = 1.0 - x[b.0].round();
                let ok = self.rows_of[b.0]
                    .iter()
                    .all(|&r| self.sys.rows()[r].is_satisfied(&x, FEASIBILITY_TOL));
                if ok {
                    flipped = true;
                } else {
                    x[b.0] = 1.0 - x[b.0];
                }
            }
            if !flipped {
                break;
            }
        }
        Ok(())
    }

    fn most_fractional(&self, fixings: &[(VarId, f64)], x: &[f64]) -> Option<VarId> {
        let mut best: Option<(VarId, f64)> = None;
        for v in self.sys.free_binaries() {
            if fixings.iter().any(|(f, _)| *f == v) {
                continue;
            }
            let frac = x[v.0].min(1.0 - x[v.0]);
            if frac > INTEGRALITY_TOL && best.is_none_or(|(_, b)| frac > b) {
                best = Some((v, frac));
            }
        }
        best.map(|(v, _)| v)
    }

    /// Heuristics on a fresh relaxation point. Returns the branching
    /// variable, or `None` when the node is closed.
    fn process(
        &mut self,
        id: usize,
        fixings: &[(VarId, f64)],
        point: &RelaxedPoint,
    ) -> Result<Option<VarId>> {
        let before = self.incumbent_value();
        let branch = self.heuristics(id, fixings, point)?;
        if self.opts.local_search > 0 && self.incumbent_value() < before {
            self.local_search(id)?;
        }
        let Some(var) = branch else {
            return Ok(None);
        };
        if self.prunable(point.bound) {
            self.record_prune(id, point.bound);
            return Ok(None);
        }
        Ok(Some(var))
    }

    fn heuristics(
        &mut self,
        id: usize,
        fixings: &[(VarId, f64)],
        point: &RelaxedPoint,
    ) -> Result<Option<VarId>> {
        let branch = self.most_fractional(fixings, &point.x);
        let Some(var) = branch else {
            self.polish(&point.x, id)?;
            return Ok(None);
        };
        if let Some(c) = self.opts.completion {
            let mut candidate = point.x.clone();
            if c.complete(&mut candidate) {
                let before = self.incumbent_value();
                self.offer(candidate.clone(), id);
                if self.incumbent_value() == before || !self.prunable(point.bound) {
                    self.polish(&candidate, id)?;
                }
            }
        }
        Ok(Some(var))
    }

    fn record_prune(&mut self, node: usize, bound: f64) {
        if self.opts.record_trace {
            let incumbent = self.incumbent_value();
            self.trace.push(TraceEvent::Pruned {
                node,
                bound,
                incumbent,
            });
        }
    }
}

/// Solves `problem` to the requested gap by best-first branch-and-bound.
///
/// Single-threaded and deterministic: the same problem and options give the
/// same node sequence and solution.
pub fn solve_mi(problem: &MiProblem, opts: &SolveOptions) -> Result<MiSolution> {
    let start = Instant::now();
    let sys = &problem.system;
    let mut s = Search {
        sys,
        opts,
        lower: sys.variables().iter().map(|v| v.lower).collect(),
        upper: sys.variables().iter().map(|v| v.upper).collect(),
        incumbent: None,
        relaxations: 0,
        trace: Vec::new(),
        lost_bound: f64::INFINITY,
        rows_of: Vec::new(),
    };
    if opts.local_search > 0 {
        s.rows_of = vec![Vec::new(); sys.num_variables()];
        for (r, row) in sys.rows().iter().enumerate() {
            for (v, _) in &row.terms {
                s.rows_of[v.0].push(r);
            }
        }
    }
    if let Some(w) = &opts.warm_start {
        if w.len() == sys.num_variables() {
            s.offer(w.clone(), 0);
            if opts.local_search > 0 {
                s.local_search(0)?;
            }
        }
    }

    let mut heap = BinaryHeap::new();
    let mut created = 0usize;
    let mut nodes = 0usize;
    let over_budget = |nodes: usize| {
        opts.budget.max_nodes.is_some_and(|m| nodes >= m)
            || opts.budget.time_limit.is_some_and(|t| start.elapsed() >= t)
    };

    let root = s.solve_node(&[])?;
    nodes += 1;
    if let Relaxation::Optimal(point) = root {
        if s.prunable(point.bound) {
            s.record_prune(0, point.bound);
        } else if let Some(branch) = s.process(0, &[], &point)? {
            heap.push(Node {
                bound: point.bound,
                depth: 0,
                id: 0,
                fixings: Vec::new(),
                branch,
            });
        }
    }

    let mut exhausted = false;
    while let Some(node) = heap.pop() {
        if s.prunable(node.bound) {
            s.record_prune(node.id, node.bound);
            continue;
        }
        if over_budget(nodes) {
            heap.push(node);
            exhausted = true;
            break;
        }
        let var = node.branch;
        for value in [0.0, 1.0] {
            created += 1;
            let id = created;
            let mut fixings = node.fixings.clone();
            fixings.push((var, value));
            nodes += 1;
            let child = match s.solve_node(&fixings) {
                Ok(r) => r,
                Err(Error::Solver(_)) => {
                    s.lost_bound = s.lost_bound.min(node.bound);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let Relaxation::Optimal(point) = child else {
                continue;
            };
            if s.prunable(point.bound) {
                s.record_prune(id, point.bound);
                continue;
            }
            if let Some(branch) = s.process(id, &fixings, &point)? {
                heap.push(Node {
                    bound: point.bound,
                    depth: node.depth + 1,
                    id,
                    fixings,
                    branch,
                });
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let Search {
        incumbent,
        relaxations,
        trace,
        lost_bound,
        ..
    } = s;
    let (values, objective) = incumbent.unwrap_or((Vec::new(), f64::INFINITY));
    let bound = open_bound.min(lost_bound).min(objective);
    let proven = !exhausted
        && (lost_bound == f64::INFINITY
            || lost_bound >= objective - opts.relative_gap * objective.abs().max(1.0));
    let status = if exhausted || !proven {
        if values.is_empty() && !exhausted {
            return Err(Error::Solver(
                "relaxations failed numerically before any feasible point was found".into(),
            ));
        }
        MiStatus::BudgetExhausted
    } else if values.is_empty() {
        MiStatus::Infeasible
    } else {
        MiStatus::Optimal
    };
    Ok(MiSolution {
        status,
        values,
        objective,
        bound: if status == MiStatus::Infeasible {
            f64::INFINITY
        } else {
            bound
        },
        nodes,
        relaxations,
        wall_time: start.elapsed(),
        trace,
    })
}

pub const BRUTE_FORCE_MAX_BINARIES: usize = 14;

/// Test oracle: enumerates every assignment of the free binaries and keeps
/// the best continuous completion.
pub fn brute_force_mi(problem: &MiProblem, max_binaries: usize) -> Result<MiSolution> {
    let start = Instant::now();
    let sys = &problem.system;
    let binaries = sys.free_binaries();
    if binaries.len() > max_binaries {
        return Err(Error::TooManyBinaries {
            count: binaries.len(),
            max: max_binaries,
        });
    }
    let base_lower: Vec<f64> = sys.variables().iter().map(|v| v.lower).collect();
    let base_upper: Vec<f64> = sys.variables().iter().map(|v| v.upper).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let count = 1usize << binaries.len();
    for mask in 0..count {
        let mut lower = base_lower.clone();
        let mut upper = base_upper.clone();
        for (bit, v) in binaries.iter().enumerate() {
            let val = ((mask >> bit) & 1) as f64;
            lower[v.0] = val;
            upper[v.0] = val;
        }
        if let Relaxation::Optimal(p) = relax::relax(sys, &lower, &upper)? {
            if best.as_ref().is_none_or(|(_, b)| p.objective < *b) {
                best = Some((p.x, p.objective));
            }
        }
    }
    let (status, values, objective) = match best {
        Some((x, v)) => (MiStatus::Optimal, x, v),
        None => (MiStatus::Infeasible, Vec::new(), f64::INFINITY),
    };
    Ok(MiSolution {
        status,
        values,
        objective,
        bound: objective,
        nodes: count,
        relaxations: count,
        wall_time: start.elapsed(),
        trace: Vec::new(),
    })
}
