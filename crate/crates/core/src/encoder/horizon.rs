use nalgebra::DMatrix;

use super::bigm::{encode_into, NetworkEncoding};
use super::system::{MiConstraintSystem, Sense, VarId};
use super::NodeBounds;
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::misolver::Completion;
use crate::relu_net::ReluNetwork;

/// Discrete dynamics `z⁺ = A_d z + B_d v` linking consecutive stages.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonLink {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
}

impl HorizonLink {
    pub fn state_dim(&self) -> usize {
        self.a_d.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_d.ncols()
    }

    pub fn step(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        (0..self.state_dim())
            .map(|i| {
                (0..z.len()).map(|j| self.a_d[(i, j)] * z[j]).sum::<f64>()
                    + (0..v.len()).map(|j| self.b_d[(i, j)] * v[j]).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageVars {
    pub state: Vec<VarId>,
    pub input: Vec<VarId>,
    pub net: NetworkEncoding,
}

/// Variable layout of an encoded prediction horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonEncoding {
    pub stages: Vec<StageVars>,
    /// `z_{N_p}`, reached from the last stage.
    pub terminal: Vec<VarId>,
}

impl HorizonEncoding {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn inputs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.stages
            .iter()
            .map(|s| s.input.iter().map(|v| x[v.0]).collect())
            .collect()
    }

    pub fn states(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.stages
            .iter()
            .map(|s| &s.state)
            .chain(std::iter::once(&self.terminal))
            .map(|vars| vars.iter().map(|v| x[v.0]).collect())
            .collect()
    }
}

/// Interval over-approximation of the `(z_k, v_k)` each stage can reach from
/// `z0`: `Z_{k+1} = (A_d Z_k ⊕ B_d V) ∩ X_z`. Every feasible prediction lies
/// inside these boxes, so bounds computed on them are valid for the stage.
pub fn stage_input_boxes(
    z0: &[f64],
    horizon: usize,
    link: &HorizonLink,
    state_box: &BoxDomain,
    input_box: &BoxDomain,
) -> Vec<BoxDomain> {
    let n = link.state_dim();
    let mut lo = z0.to_vec();
    let mut hi = z0.to_vec();
    let mut boxes = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let zbox = BoxDomain {
            lower: lo.clone(),
            upper: hi.clone(),
        };
        boxes.push(zbox.product(input_box));
        let mut next_lo = vec![0.0; n];
        let mut next_hi = vec![0.0; n];
        for i in 0..n {
            let mut l = 0.0;
            let mut u = 0.0;
            for j in 0..n {
                let a = link.a_d[(i, j)];
                l += (a * lo[j]).min(a * hi[j]);
                u += (a * lo[j]).max(a * hi[j]);
            }
            for j in 0..link.input_dim() {
                let b = link.b_d[(i, j)];
                l += (b * input_box.lower[j]).min(b * input_box.upper[j]);
                u += (b * input_box.lower[j]).max(b * input_box.upper[j]);
            }
            let cl = l.max(state_box.lower[i]);
            let cu = u.min(state_box.upper[i]);
            // An empty intersection means the horizon is infeasible; keep
            // the state box so the solver reports it.
            if cl <= cu {
                next_lo[i] = cl;
                next_hi[i] = cu;
            } else {
                next_lo[i] = state_box.lower[i];
                next_hi[i] = state_box.upper[i];
            }
        }
        lo = next_lo;
        hi = next_hi;
    }
    boxes
}

/// Builds `N_p = stage_bounds.len()` copies of the network encoding, one per
/// stage, with inputs `[z_k, v_k]` chained by the dynamics rows. Stage state
/// and input variables take their bounds from the stage's input box; the
/// terminal state is bounded by `state_box`.
pub fn replicate_over_horizon(
    net: &ReluNetwork,
    stage_bounds: &[NodeBounds],
    link: &HorizonLink,
    state_box: &BoxDomain,
    u_max_eff: &[f64],
) -> Result<(MiConstraintSystem, HorizonEncoding)> {
    let n = link.state_dim();
    let m = link.input_dim();
    if stage_bounds.is_empty() {
        return Err(Error::Argument(
            "horizon must have at least one stage".into(),
        ));
    }
    if net.input_dim() != n + m {
        return Err(Error::Dimension {
            context: "network input vs [z, v]",
            expected: n + m,
            got: net.input_dim(),
        });
    }
    if state_box.dim() != n {
        return Err(Error::Dimension {
            context: "state box",
            expected: n,
            got: state_box.dim(),
        });
    }

    let mut sys = MiConstraintSystem::new();
    let mut stages = Vec::with_capacity(stage_bounds.len());
    let mut state: Vec<VarId> = (0..n)
        .map(|i| {
            let b = &stage_bounds[0].input;
            sys.add_continuous(format!("z_s0_{i}"), b.lower[i], b.upper[i])
        })
        .collect();
    for (k, bounds) in stage_bounds.iter().enumerate() {
        let input: Vec<VarId> = (0..m)
            .map(|i| {
                sys.add_continuous(
                    format!("v_s{k}_{i}"),
                    bounds.input.lower[n + i],
                    bounds.input.upper[n + i],
                )
            })
            .collect();
        let mut net_inputs = state.clone();
        net_inputs.extend_from_slice(&input);
        let enc = encode_into(
            &mut sys,
            net,
            bounds,
            &net_inputs,
            u_max_eff,
            &format!("s{k}"),
        )?;

        let next_box = stage_bounds.get(k + 1).map_or(state_box, |b| &b.input);
        let next: Vec<VarId> = (0..n)
            .map(|i| {
                sys.add_continuous(
                    format!("z_s{}_{i}", k + 1),
                    next_box.lower[i],
                    next_box.upper[i],
                )
            })
            .collect();
        for i in 0..n {
            let mut terms = vec![(next[i], 1.0)];
            for j in 0..n {
                let a = link.a_d[(i, j)];
                if a != 0.0 {
                    terms.push((state[j], -a));
                }
            }
            for j in 0..m {
                let b = link.b_d[(i, j)];
                if b != 0.0 {
                    terms.push((input[j], -b));
                }
            }
            sys.add_row(format!("dyn_s{k}_{i}"), terms, Sense::Eq, 0.0);
        }
        stages.push(StageVars {
            state: state.clone(),
            input,
            net: enc,
        });
        state = next;
    }
    Ok((
        sys,
        HorizonEncoding {
            stages,
            terminal: state,
        },
    ))
}

/// Primal completion for a horizon: re-simulates the states from `z_0` and
/// the stage inputs, then completes every network copy.
pub struct HorizonCompletion<'a> {
    pub net: &'a ReluNetwork,
    pub encoding: &'a HorizonEncoding,
    pub link: &'a HorizonLink,
    pub system: &'a MiConstraintSystem,
}

impl Completion for HorizonCompletion<'_> {
    fn complete(&self, x: &mut [f64]) -> bool {
        let stages = &self.encoding.stages;
        for k in 0..stages.len() {
            let z: Vec<f64> = stages[k].state.iter().map(|v| x[v.0]).collect();
            let v: Vec<f64> = stages[k].input.iter().map(|v| x[v.0]).collect();
            let next = self.link.step(&z, &v);
            let target = stages
                .get(k + 1)
                .map_or(&self.encoding.terminal, |s| &s.state);
            for (var, val) in target.iter().zip(next) {
                x[var.0] = val;
            }
            stages[k].net.complete(self.net, self.system, x);
        }
        true
    }
}
