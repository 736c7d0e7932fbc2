use crate::controllers::{ClfCbfController, MpcController, StepStatus};
use crate::dynamics::Plant;
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;

use super::log::{Abort, LogRow, Prediction, RowStatus, TrajectoryLog};

/// Consecutive infeasible steps tolerated before the run is aborted.
pub const FALLBACK_BUDGET: usize = 3;

pub enum LoopController {
    ClfCbf(ClfCbfController),
    Mpc(MpcController),
}

/// Controller output in a form shared by both laws.
struct Decision {
    status: StepStatus,
    v: Vec<f64>,
    phi_nn: Vec<f64>,
    delta: f64,
    pred_max_abs_phi_nn: f64,
    nodes: usize,
    ms: f64,
    prediction: Option<Prediction>,
    plan: Option<Vec<Vec<f64>>>,
}

impl LoopController {
    fn decide(
        &self,
        step: usize,
        t: f64,
        z: &[f64],
        last_v: Option<&[f64]>,
        plan: Option<&[Vec<f64>]>,
    ) -> Result<Decision> {
        match self {
            LoopController::ClfCbf(c) => {
                let out = c.step(z, last_v)?;
                Ok(Decision {
                    status: out.status,
                    v: out.v,
                    phi_nn: out.phi_nn,
                    delta: out.delta,
                    pred_max_abs_phi_nn: f64::NAN,
                    nodes: out.stats.nodes,
                    ms: out.stats.solve_time.as_secs_f64() * 1e3,
                    prediction: None,
                    plan: None,
                })
            }
            LoopController::Mpc(c) => {
                let out = c.step(z, t, plan)?;
                let pred = out
                    .phi_nn
                    .iter()
                    .flatten()
                    .fold(f64::NAN, |acc: f64, p| acc.max(p.abs()));
                let feasible = out.status != StepStatus::Infeasible;
                Ok(Decision {
                    status: out.status,
                    phi_nn: out.phi_nn.first().cloned().unwrap_or_default(),
                    v: out.v0,
                    delta: f64::NAN,
                    pred_max_abs_phi_nn: pred,
                    nodes: out.stats.nodes,
                    ms: out.stats.solve_time.as_secs_f64() * 1e3,
                    prediction: feasible.then(|| Prediction {
                        step,
                        t,
                        states: out.states.clone(),
                        inputs: out.inputs.clone(),
                        phi_nn: out.phi_nn.clone(),
                        shift_feasible: out.shift_feasible,
                    }),
                    plan: feasible.then_some(out.inputs),
                })
            }
        }
    }
}

/// Closed-loop run settings.
#[derive(Debug, Clone)]
pub struct LoopSettings {
    pub initial_state: Vec<f64>,
    pub duration: f64,
    pub sample_time: f64,
    pub substeps: usize,
    /// State part of the training box; leaving it aborts the run.
    pub training_box: BoxDomain,
}

/// Runs the true plant under zero-order hold `u = Φ(z, v*)`, one row per
/// sample `t_k = k t_s`, `k = 0..=N`. Aborts are recorded in the returned
/// log, which then holds the rows up to the abort.
pub fn simulate(
    plant: &Plant,
    controller: &LoopController,
    settings: &LoopSettings,
) -> Result<TrajectoryLog> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    if settings.initial_state.len() != n || settings.training_box.dim() != n {
        return Err(Error::Dimension {
            context: "closed-loop initial state",
            expected: n,
            got: settings.initial_state.len(),
        });
    }
    if !(settings.sample_time > 0.0) || !(settings.duration >= 0.0) {
        return Err(Error::Argument(
            "sample_time must be positive and duration non-negative".into(),
        ));
    }
    let steps = (settings.duration / settings.sample_time).round() as usize;
    let mut log = TrajectoryLog::new(n, m);
    let mut x = plant.physical_from_flat(&settings.initial_state)?;
    let mut held_u = vec![0.0; m];
    let mut last_v: Option<Vec<f64>> = None;
    let mut plan: Option<Vec<Vec<f64>>> = None;
    let mut infeasible_run = 0;

    for k in 0..=steps {
        let t = k as f64 * settings.sample_time;
        let z = plant.flat_from_physical(&x)?;
        if !settings.training_box.contains(&z, 1e-9) {
            log.abort = Some(Abort {
                t,
                reason: Error::LeftDomain {
                    time: t,
                    detail: format!("z = {z:?}"),
                }
                .to_string(),
                infeasible: false,
            });
            break;
        }
        let d = controller.decide(k, t, &z, last_v.as_deref(), plan.as_deref())?;
        let (status, v, u) = if d.status == StepStatus::Infeasible {
            infeasible_run += 1;
            plan = None;
            (RowStatus::Fallback, vec![f64::NAN; m], held_u.clone())
        } else {
            infeasible_run = 0;
            let u = (0..m)
                .map(|j| plant.phi(&z, d.v[j]))
                .collect::<Result<Vec<f64>>>()?;
            held_u.clone_from(&u);
            last_v = Some(d.v.clone());
            plan = d.plan;
            let s = if d.status == StepStatus::Optimal {
                RowStatus::Optimal
            } else {
                RowStatus::Suboptimal
            };
            (s, d.v, u)
        };
        if let Some(p) = d.prediction {
            log.predictions.push(p);
        }
        log.rows.push(LogRow {
            t,
            x: x.clone(),
            z,
            v,
            u: u.clone(),
            phi_nn: if status == RowStatus::Fallback {
                vec![f64::NAN; m]
            } else {
                d.phi_nn
            },
            delta: d.delta,
            pred_max_abs_phi_nn: d.pred_max_abs_phi_nn,
            status,
            nodes: d.nodes,
            ms: d.ms,
        });
        if infeasible_run >= FALLBACK_BUDGET {
            log.abort = Some(Abort {
                t,
                reason: Error::InfeasibleAbort {
                    time: t,
                    consecutive: infeasible_run,
                }
                .to_string(),
                infeasible: true,
            });
            break;
        }
        if k < steps {
            x = plant.integrate(&x, u[0], settings.sample_time, settings.substeps)?;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{ClfCbfSpec, CostMode};
    use crate::misolver::Budget;
    use crate::relu_net::{Layer, ReluNetwork};

    /// `Φ_NN(z, v) = v + z_1`, one ReLU pair standing in for the identity.
    fn toy_net() -> ReluNetwork {
        ReluNetwork::new(vec![
            Layer::new(
                vec![vec![1.0, 0.0, 1.0], vec![-1.0, 0.0, -1.0]],
                vec![0.0, 0.0],
            )
            .unwrap(),
            Layer::new(vec![vec![1.0, -1.0]], vec![0.0]).unwrap(),
        ])
        .unwrap()
    }

    fn controller(plant: &Plant, ts: f64) -> LoopController {
        let spec = ClfCbfSpec {
            p: vec![vec![4.58, 10.0], vec![10.0, 45.83]],
            obstacle_center: vec![1.5, 1.0],
            obstacle_radius: 0.8,
            kappa: 4.0,
            beta: 0.001,
            cost: CostMode::Qcost,
            feedback_gain: vec![vec![4.47, 3.37]],
        };
        LoopController::ClfCbf(
            ClfCbfController::new(
                spec,
                toy_net(),
                plant.brunovsky(ts).unwrap(),
                BoxDomain::symmetric(&[10.0]).unwrap(),
                vec![5.0],
                Budget::default(),
            )
            .unwrap(),
        )
    }

    fn settings(duration: f64) -> LoopSettings {
        LoopSettings {
            initial_state: vec![0.0, 1.0],
            duration,
            sample_time: 0.05,
            substeps: 10,
            training_box: BoxDomain::symmetric(&[5.0, 5.0]).unwrap(),
        }
    }

    #[test]
    fn zero_duration_gives_initial_row_only() {
        let plant = Plant::msd();
        let log = simulate(&plant, &controller(&plant, 0.05), &settings(0.0)).unwrap();
        assert_eq!(log.rows.len(), 1);
        assert_eq!(log.rows[0].t, 0.0);
        assert!(log.abort.is_none());
    }

    #[test]
    fn short_run_logs_consistent_inputs() {
        let plant = Plant::msd();
        let log = simulate(&plant, &controller(&plant, 0.05), &settings(0.5)).unwrap();
        assert_eq!(log.rows.len(), 11);
        for r in &log.rows {
            assert_ne!(r.status, RowStatus::Fallback);
            assert_eq!(r.u[0], plant.phi(&r.z, r.v[0]).unwrap());
        }
        assert!(log.rows.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn starting_outside_training_box_aborts() {
        let plant = Plant::msd();
        let mut s = settings(1.0);
        s.training_box = BoxDomain::symmetric(&[0.5, 0.5]).unwrap();
        let log = simulate(&plant, &controller(&plant, 0.05), &s).unwrap();
        assert!(log.rows.is_empty());
        let abort = log.abort.unwrap();
        assert!(!abort.infeasible);
        assert!(abort.reason.contains("left the training box"));
    }
}
