//! Axis-aligned boxes and the tensor grids sampled over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite axis-aligned box `{x : lower ≤ x ≤ upper}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    /// Builds a box, rejecting mismatched lengths, non-finite entries and
    /// inverted axes. Degenerate axes (`lower == upper`) are allowed.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                context: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::Argument(format!("box axis {i} is not finite")));
            }
            if l > u {
                return Err(Error::Argument(format!(
                    "box axis {i} has lower {l} above upper {u}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-r_i, r_i]` per axis.
    pub fn symmetric(radii: &[f64]) -> Result<Self> {
        Self::new(radii.iter().map(|r| -r).collect(), radii.to_vec())
    }

    /// The degenerate box containing exactly one point.
    pub fn point(p: &[f64]) -> Result<Self> {
        Self::new(p.to_vec(), p.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &BoxDomain) -> BoxDomain {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        BoxDomain { lower, upper }
    }

    /// True when `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BoxDomain) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] >= other.lower[i] && self.upper[i] <= other.upper[i])
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn grid(&self, per_axis: usize) -> Result<TensorGrid<'_>> {
        TensorGrid::new(self, per_axis)
    }
}

/// Uniform tensor grid with `per_axis` points on every axis, endpoints
/// included. A degenerate axis contributes its single value `per_axis` times.
#[derive(Debug, Clone, Copy)]
pub struct TensorGrid<'a> {
    domain: &'a BoxDomain,
    per_axis: usize,
}

impl<'a> TensorGrid<'a> {
    pub fn new(domain: &'a BoxDomain, per_axis: usize) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::Argument(format!(
                "grid needs at least 2 points per axis, got {per_axis}"
            )));
        }
        Ok(Self { domain, per_axis })
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.domain.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    fn coordinate(&self, axis: usize, k: usize) -> f64 {
        let l = self.domain.lower[axis];
        let u = self.domain.upper[axis];
        if k + 1 == self.per_axis {
            u
        } else {
            l + (u - l) * k as f64 / (self.per_axis - 1) as f64
        }
    }

    /// Writes the point with flat index `index` into `out`; the last axis
    /// varies fastest.
    pub fn point_into(&self, mut index: usize, out: &mut [f64]) {
        for axis in (0..self.domain.dim()).rev() {
            let k = index % self.per_axis;
            index /= self.per_axis;
            out[axis] = self.coordinate(axis, k);
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.domain.dim()];
        self.point_into(index, &mut p);
        p
    }

    /// Visits every grid point in index order without allocating per point.
    pub fn for_each<E>(
        &self,
        mut f: impl FnMut(usize, &[f64]) -> std::result::Result<(), E>,
    ) -> std::result::Result<(), E> {
        let dim = self.domain.dim();
        let mut counters = vec![0usize; dim];
        let mut point: Vec<f64> = (0..dim).map(|a| self.coordinate(a, 0)).collect();
        for index in 0..self.len() {
            f(index, &point)?;
            for axis in (0..dim).rev() {
                counters[axis] += 1;
                if counters[axis] < self.per_axis {
                    point[axis] = self.coordinate(axis, counters[axis]);
                    break;
                }
                counters[axis] = 0;
                point[axis] = self.coordinate(axis, 0);
            }
        }
        Ok(())
    }
}
