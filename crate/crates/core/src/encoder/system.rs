//! Mixed-integer linear constraint systems with an optional convex quadratic
//! objective.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

impl Variable {
    pub fn is_fixed(&self) -> bool {
        self.lower == self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearRow {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }

    /// Whether the row holds within `tol` relative to its term magnitudes.
    pub fn is_satisfied(&self, x: &[f64], tol: f64) -> bool {
        self.violation(x) <= tol * self.magnitude(x)
    }

    /// Scale used to make feasibility tolerances relative.
    fn magnitude(&self, x: &[f64]) -> f64 {
        1.0 + self.rhs.abs()
            + self
                .terms
                .iter()
                .map(|(v, c)| (c * x[v.0]).abs())
                .sum::<f64>()
    }
}

/// `Σ c_i x_i + Σ q_ij x_i x_j + constant`, to be minimized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub linear: Vec<(VarId, f64)>,
    pub quadratic: Vec<(VarId, VarId, f64)>,
    pub constant: f64,
}

impl Objective {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant
            + self.linear.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
            + self
                .quadratic
                .iter()
                .map(|(a, b, q)| q * x[a.0] * x[b.0])
                .sum::<f64>()
    }

    pub fn is_linear(&self) -> bool {
        self.quadratic.iter().all(|(_, _, q)| *q == 0.0)
    }

    /// Adds `weight · (x − target)²`.
    pub fn add_square(&mut self, var: VarId, target: f64, weight: f64) {
        self.quadratic.push((var, var, weight));
        self.linear.push((var, -2.0 * weight * target));
        self.constant += weight * target * target;
    }
}

/// Variables, rows and objective of a mixed-integer program.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiConstraintSystem {
    variables: Vec<Variable>,
    rows: Vec<LinearRow>,
    objective: Objective,
}

/// Tolerances used by [`MiConstraintSystem::check`].
pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const INTEGRALITY_TOL: f64 = 1e-6;

impl MiConstraintSystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
    ) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind,
            lower,
            upper,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_variable(name, VarKind::Continuous, lower, upper)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_variable(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.rows.push(LinearRow {
            name: name.into(),
            terms,
            sense,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn rows(&self) -> &[LinearRow] {
        &self.rows
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn objective_mut(&mut self) -> &mut Objective {
        &mut self.objective
    }

    pub fn set_objective(&mut self, objective: Objective) {
        self.objective = objective;
    }

    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) {
        let v = &mut self.variables[id.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn fix(&mut self, id: VarId, value: f64) {
        self.set_bounds(id, value, value);
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    /// Declared binaries, including those fixed by stable-node elimination.
    pub fn binary_count(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    /// Binaries the branch-and-bound actually has to decide.
    pub fn free_binary_count(&self) -> usize {
        self.free_binaries().len()
    }

    pub fn free_binaries(&self) -> Vec<VarId> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary && !v.is_fixed())
            .map(|(i, _)| VarId(i))
            .collect()
    }

    pub fn name_index(&self) -> HashMap<&str, VarId> {
        self.variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), VarId(i)))
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<VarId> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .map(VarId)
    }

    /// Appends all variables and rows of `other`, renumbering its variables.
    /// Returns the offset added to `other`'s variable indices. The objective of
    /// `other` is added to this one.
    pub fn append(&mut self, other: &MiConstraintSystem) -> usize {
        let offset = self.variables.len();
        let shift = |v: VarId| VarId(v.0 + offset);
        self.variables.extend(other.variables.iter().cloned());
        self.rows.extend(other.rows.iter().map(|r| LinearRow {
            name: r.name.clone(),
            terms: r.terms.iter().map(|(v, c)| (shift(*v), *c)).collect(),
            sense: r.sense,
            rhs: r.rhs,
        }));
        self.objective
            .linear
            .extend(other.objective.linear.iter().map(|(v, c)| (shift(*v), *c)));
        self.objective.quadratic.extend(
            other
                .objective
                .quadratic
                .iter()
                .map(|(a, b, q)| (shift(*a), shift(*b), *q)),
        );
        self.objective.constant += other.objective.constant;
        offset
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.value(x)
    }

    /// Checks a full assignment against bounds, rows and integrality. Row and
    /// bound tolerances are relative to the magnitude of the terms involved.
    pub fn check(&self, x: &[f64], feas_tol: f64, int_tol: f64) -> Result<()> {
        if x.len() != self.variables.len() {
            return Err(Error::Dimension {
                context: "assignment",
                expected: self.variables.len(),
                got: x.len(),
            });
        }
        for (v, &val) in self.variables.iter().zip(x) {
            let tol = feas_tol * (1.0 + val.abs());
            if !val.is_finite() || val < v.lower - tol || val > v.upper + tol {
                return Err(Error::Validation(format!(
                    "variable {} = {val} outside [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
            if v.kind == VarKind::Binary && val.min(1.0 - val).abs() > int_tol {
                return Err(Error::Validation(format!(
                    "binary {} = {val} is fractional",
                    v.name
                )));
            }
        }
        for row in &self.rows {
            if !row.is_satisfied(x, feas_tol) {
                let viol = row.violation(x);
                return Err(Error::Validation(format!(
                    "row {} violated by {viol:e}",
                    row.name
                )));
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        self.check(x, FEASIBILITY_TOL, INTEGRALITY_TOL).is_ok()
    }

    /// Largest absolute row violation.
    pub fn max_row_violation(&self, x: &[f64]) -> f64 {
        self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max)
    }
}
