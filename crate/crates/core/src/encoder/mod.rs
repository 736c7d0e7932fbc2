//! Compilation of a ReLU network into exact big-M mixed-integer rows.
//!
//! Each hidden node `y = max(0, wᵀx + b)` with pre-activation bounds
//! `L ≤ wᵀx + b ≤ U` becomes
//!
//! ```text
//! wᵀx + b = ȳ − y̲,  ȳ ≥ 0,  y̲ ≥ 0,
//! ȳ ≤ U α,  y̲ ≤ −L (1 − α),  α ∈ {0, 1}
//! ```
//!
//! and the output rows `|y^K| ≤ u_max − ε` close the system. The bounds come
//! from interval propagation of the input box ([`fbbt`]).

mod bigm;
mod horizon;
mod lp;
mod system;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::relu_net::ReluNetwork;

pub use bigm::{encode, encode_into, HiddenNodeVars, NetworkCompletion, NetworkEncoding};
pub use horizon::{
    replicate_over_horizon, stage_input_boxes, HorizonCompletion, HorizonEncoding, HorizonLink,
    StageVars,
};
pub use lp::{export_lp, parse_lp, write_lp};
pub use system::{
    LinearRow, MiConstraintSystem, Objective, Sense, VarId, VarKind, Variable, FEASIBILITY_TOL,
    INTEGRALITY_TOL,
};

/// Pre-activation bounds `[L_j^k, U_j^k]` of every hidden node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBounds {
    pub input: BoxDomain,
    /// `lower[k][j]` is the bound of node `j` in hidden layer `k + 1`.
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl NodeBounds {
    pub fn layer_count(&self) -> usize {
        self.lower.len()
    }

    /// Nodes whose pre-activation is provably non-negative.
    pub fn stable_active(&self) -> usize {
        self.lower.iter().flatten().filter(|l| **l >= 0.0).count()
    }

    /// Nodes whose pre-activation is provably non-positive.
    pub fn stable_inactive(&self) -> usize {
        self.lower
            .iter()
            .flatten()
            .zip(self.upper.iter().flatten())
            .filter(|(l, u)| **u <= 0.0 && **l < 0.0)
            .count()
    }

    pub fn unstable(&self) -> usize {
        self.lower
            .iter()
            .flatten()
            .zip(self.upper.iter().flatten())
            .filter(|(l, u)| **l < 0.0 && **u > 0.0)
            .count()
    }

    pub fn contains(&self, pre_activations: &[Vec<f64>], tol: f64) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(pre_activations)
            .all(|((lo, up), pre)| {
                lo.iter()
                    .zip(up)
                    .zip(pre)
                    .all(|((l, u), p)| *p >= l - tol && *p <= u + tol)
            })
    }
}

/// Feasibility-based bound tightening: propagates the input box through the
/// hidden layers with interval arithmetic. The first layer uses the box
/// directly; deeper layers use the ReLU-clipped bounds `max(0, L)`,
/// `max(0, U)` of the previous layer.
pub fn fbbt(net: &ReluNetwork, input: &BoxDomain) -> Result<NodeBounds> {
    if input.dim() != net.input_dim() {
        return Err(Error::Dimension {
            context: "fbbt input box",
            expected: net.input_dim(),
            got: input.dim(),
        });
    }
    let hidden = &net.layers()[..net.depth() - 1];
    let mut lower = Vec::with_capacity(hidden.len());
    let mut upper = Vec::with_capacity(hidden.len());
    let mut prev_lo = input.lower.clone();
    let mut prev_hi = input.upper.clone();
    for (k, layer) in hidden.iter().enumerate() {
        if k > 0 {
            prev_lo.iter_mut().for_each(|v| *v = v.max(0.0));
            prev_hi.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let mut lo = Vec::with_capacity(layer.outputs());
        let mut hi = Vec::with_capacity(layer.outputs());
        for j in 0..layer.outputs() {
            let mut l = layer.bias()[j];
            let mut u = layer.bias()[j];
            for (i, w) in layer.row(j).iter().enumerate() {
                let a = w * prev_hi[i];
                let b = w * prev_lo[i];
                u += a.max(b);
                l += a.min(b);
            }
            lo.push(l);
            hi.push(u);
        }
        prev_lo = lo.clone();
        prev_hi = hi.clone();
        lower.push(lo);
        upper.push(hi);
    }
    Ok(NodeBounds {
        input: input.clone(),
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_net::Layer;

    #[test]
    fn first_layer_hand_example() {
        let net = ReluNetwork::new(vec![
            Layer::new(vec![vec![1.0, -1.0]], vec![0.0]).unwrap(),
            Layer::new(vec![vec![2.0]], vec![1.0]).unwrap(),
            Layer::new(vec![vec![1.0]], vec![0.0]).unwrap(),
        ])
        .unwrap();
        let b = fbbt(
            &net,
            &BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(b.lower[0], vec![-1.0]);
        assert_eq!(b.upper[0], vec![1.0]);
        // Clipped (0, 1) through 2x + 1.
        assert_eq!(b.lower[1], vec![1.0]);
        assert_eq!(b.upper[1], vec![3.0]);
    }

    #[test]
    fn constant_network_has_point_bounds() {
        let c = 0.7;
        let net = ReluNetwork::new(vec![
            Layer::new(vec![vec![0.0, 0.0]; 3], vec![c; 3]).unwrap(),
            Layer::new(vec![vec![0.0; 3]; 2], vec![c; 2]).unwrap(),
            Layer::new(vec![vec![0.0; 2]], vec![0.0]).unwrap(),
        ])
        .unwrap();
        let b = fbbt(&net, &BoxDomain::symmetric(&[3.0, 4.0]).unwrap()).unwrap();
        for (lo, hi) in b.lower.iter().zip(&b.upper) {
            assert!(lo.iter().chain(hi).all(|v| *v == c));
        }
    }

    #[test]
    fn rejects_wrong_box_dimension() {
        let net = ReluNetwork::new(vec![Layer::new(vec![vec![1.0]], vec![0.0]).unwrap()]).unwrap();
        assert!(fbbt(&net, &BoxDomain::symmetric(&[1.0, 1.0]).unwrap()).is_err());
    }
}
