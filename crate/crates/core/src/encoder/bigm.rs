use super::system::{MiConstraintSystem, Sense, VarId};
use super::NodeBounds;
use crate::error::{Error, Result};
use crate::misolver::Completion;
use crate::relu_net::ReluNetwork;

/// Variables of one hidden node: `ȳ` (pos), `y̲` (neg) and the activation `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenNodeVars {
    pub pos: VarId,
    pub neg: VarId,
    pub active: VarId,
}

/// Where one network copy lives inside a [`MiConstraintSystem`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEncoding {
    pub inputs: Vec<VarId>,
    pub hidden: Vec<Vec<HiddenNodeVars>>,
    pub outputs: Vec<VarId>,
}

impl NetworkEncoding {
    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.hidden.iter().flatten().map(|n| n.active)
    }

    /// Overwrites the node and output variables of `x` with the unique
    /// completion implied by the input variables already in `x`. Activation
    /// ties (`pre-activation = 0`) follow the variable's fixing when it has
    /// one, otherwise `α = 0`.
    pub fn complete(&self, net: &ReluNetwork, sys: &MiConstraintSystem, x: &mut [f64]) {
        let mut current: Vec<f64> = self.inputs.iter().map(|v| x[v.0]).collect();
        let mut pre = Vec::new();
        for (k, layer) in net.layers().iter().enumerate() {
            pre.resize(layer.outputs(), 0.0);
            layer.affine_into(&current, &mut pre);
            if k + 1 == net.depth() {
                for (o, v) in self.outputs.iter().enumerate() {
                    x[v.0] = pre[o];
                }
                break;
            }
            for (j, node) in self.hidden[k].iter().enumerate() {
                let p = pre[j];
                x[node.pos.0] = p.max(0.0);
                x[node.neg.0] = (-p).max(0.0);
                let fixed = sys.variable(node.active);
                x[node.active.0] = if p > 0.0 {
                    1.0
                } else if p < 0.0 {
                    0.0
                } else if fixed.is_fixed() {
                    fixed.lower
                } else {
                    0.0
                };
            }
            current.clear();
            current.extend(pre.iter().map(|p| p.max(0.0)));
        }
    }
}

/// Encodes `net` over the box in `bounds` into a fresh system whose first
/// variables are the network inputs.
pub fn encode(
    net: &ReluNetwork,
    bounds: &NodeBounds,
    u_max_eff: &[f64],
) -> Result<(MiConstraintSystem, NetworkEncoding)> {
    let mut sys = MiConstraintSystem::new();
    let inputs: Vec<VarId> = (0..net.input_dim())
        .map(|i| {
            sys.add_continuous(
                format!("y0_{i}"),
                bounds.input.lower[i],
                bounds.input.upper[i],
            )
        })
        .collect();
    let enc = encode_into(&mut sys, net, bounds, &inputs, u_max_eff, "nn")?;
    Ok((sys, enc))
}

/// Adds one network copy to `sys`, reading its inputs from `inputs`.
///
/// Nodes with `L ≥ 0` get `α` fixed to 1 and nodes with `U ≤ 0` get `α`
/// fixed to 0 with `ȳ = 0`; both keep their rows so the binary count of the
/// system is always `Σ n_k`. A negative `U` is clamped to 0 in the row
/// `ȳ ≤ U α`; the node is constant 0 either way.
pub fn encode_into(
    sys: &mut MiConstraintSystem,
    net: &ReluNetwork,
    bounds: &NodeBounds,
    inputs: &[VarId],
    u_max_eff: &[f64],
    prefix: &str,
) -> Result<NetworkEncoding> {
    if inputs.len() != net.input_dim() {
        return Err(Error::Dimension {
            context: "encoded network inputs",
            expected: net.input_dim(),
            got: inputs.len(),
        });
    }
    if u_max_eff.len() != net.output_dim() {
        return Err(Error::Dimension {
            context: "output budget",
            expected: net.output_dim(),
            got: u_max_eff.len(),
        });
    }
    if let Some(bad) = u_max_eff.iter().find(|u| !(**u > 0.0)) {
        return Err(Error::Config(format!(
            "ε exceeds input budget (tightened bound u_max − ε = {bad})"
        )));
    }
    let widths = net.hidden_widths();
    if bounds.layer_count() != widths.len()
        || bounds.lower.iter().zip(&widths).any(|(l, w)| l.len() != *w)
    {
        return Err(Error::Argument(
            "node bounds do not match the network shape".into(),
        ));
    }

    let mut hidden = Vec::with_capacity(widths.len());
    let mut prev: Vec<VarId> = inputs.to_vec();
    for (k, layer) in net.layers()[..net.depth() - 1].iter().enumerate() {
        let mut nodes = Vec::with_capacity(layer.outputs());
        for j in 0..layer.outputs() {
            let l = bounds.lower[k][j];
            let u = bounds.upper[k][j];
            let tag = format!("{prefix}_l{}_n{j}", k + 1);
            let pos = sys.add_continuous(format!("{tag}_p"), 0.0, u.max(0.0));
            let neg = sys.add_continuous(format!("{tag}_m"), 0.0, (-l).max(0.0));
            let active = sys.add_binary(format!("{tag}_a"));
            if l >= 0.0 && u > 0.0 {
                sys.fix(active, 1.0);
            } else if u <= 0.0 {
                sys.fix(active, 0.0);
                sys.fix(pos, 0.0);
            }
            let mut terms: Vec<(VarId, f64)> = prev
                .iter()
                .zip(layer.row(j))
                .filter(|(_, w)| **w != 0.0)
                .map(|(v, w)| (*v, *w))
                .collect();
            terms.push((pos, -1.0));
            terms.push((neg, 1.0));
            sys.add_row(format!("{tag}_split"), terms, Sense::Eq, -layer.bias()[j]);
            sys.add_row(
                format!("{tag}_up"),
                vec![(pos, 1.0), (active, -u.max(0.0))],
                Sense::Le,
                0.0,
            );
            sys.add_row(
                format!("{tag}_lo"),
                vec![(neg, 1.0), (active, -l)],
                Sense::Le,
                -l,
            );
            nodes.push(HiddenNodeVars { pos, neg, active });
        }
        prev = nodes.iter().map(|n| n.pos).collect();
        hidden.push(nodes);
    }

    let out_layer = &net.layers()[net.depth() - 1];
    let mut outputs = Vec::with_capacity(out_layer.outputs());
    for (o, &budget) in u_max_eff.iter().enumerate() {
        let y = sys.add_continuous(format!("{prefix}_out{o}"), -budget, budget);
        let mut terms: Vec<(VarId, f64)> = prev
            .iter()
            .zip(out_layer.row(o))
            .filter(|(_, w)| **w != 0.0)
            .map(|(v, w)| (*v, *w))
            .collect();
        terms.push((y, -1.0));
        sys.add_row(
            format!("{prefix}_out{o}_def"),
            terms,
            Sense::Eq,
            -out_layer.bias()[o],
        );
        outputs.push(y);
    }

    Ok(NetworkEncoding {
        inputs: inputs.to_vec(),
        hidden,
        outputs,
    })
}

/// Primal completion for a single encoded copy: recomputes every node from
/// the input variables of a relaxation point.
pub struct NetworkCompletion<'a> {
    pub net: &'a ReluNetwork,
    pub encoding: &'a NetworkEncoding,
    pub system: &'a MiConstraintSystem,
}

impl Completion for NetworkCompletion<'_> {
    fn complete(&self, x: &mut [f64]) -> bool {
        self.encoding.complete(self.net, self.system, x);
        true
    }
}
