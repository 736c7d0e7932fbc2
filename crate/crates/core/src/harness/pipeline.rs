use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controllers::{ClfCbfController, MpcController, Reference};
use crate::encoder::{encode, export_lp, fbbt, MiConstraintSystem, NodeBounds};
use crate::errbound::{estimate_epsilon, validate_epsilon, ErrorBoundReport};
use crate::error::{Error, Result};
use crate::relu_net::{fit_regression, FitReport, ReluNetwork, TrainingGrid};

use super::log::{
    emit_csv, emit_predictions_csv, emit_report, Report, RowStatus, Summary, TrajectoryLog,
};
use super::scenario::{ControllerConfig, Scenario};
use super::simulate::{simulate, LoopController, LoopSettings};

pub const NETWORK_FILE: &str = "network.json";
pub const FIT_FILE: &str = "fit.json";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const EPSILON_FILE: &str = "epsilon.json";
pub const ENCODING_FILE: &str = "encoding.json";
pub const NETWORK_LP_FILE: &str = "network.lp";
pub const STEP_LP_FILE: &str = "controller_step0.lp";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_FILE: &str = "report.json";

/// Position error below which a reference step counts as tracked.
pub const TRACKING_TOL: f64 = 0.05;

impl Error {
    /// The innermost error beneath any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 2 for a failed validation, 3 for an aborted
    /// closed-loop run, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Validation(_) => 2,
            Error::InfeasibleAbort { .. } | Error::LeftDomain { .. } => 3,
            _ => 1,
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Trains the surrogate on the scenario grid, or loads the pre-trained
/// network named by the scenario (no fit report then).
pub fn train(s: &Scenario) -> Result<(ReluNetwork, Option<FitReport>)> {
    if let Some(path) = &s.training.network {
        return Ok((ReluNetwork::load(path)?, None));
    }
    let phi = s.plant.phi_map();
    let grid = TrainingGrid::new(s.training.domain()?, s.training.samples_per_axis, &phi)?;
    let (net, fit) = fit_regression(&grid, s.training.architecture(), &s.training.optimizer)?;
    Ok((net, Some(fit)))
}

/// Node bounds over the training box and a validated error bound. A failed
/// validation is an error carrying the worst residual.
pub fn bound(s: &Scenario, net: &ReluNetwork) -> Result<(NodeBounds, ErrorBoundReport)> {
    let domain = s.training.domain()?;
    let bounds = fbbt(net, &domain)?;
    let phi = s.plant.phi_map();
    let mut report = estimate_epsilon(&phi, net, &domain, &s.bound.pso, &[])?;
    let per_axis = s.bound.validation_factor * s.training.samples_per_axis;
    let v = validate_epsilon(&phi, net, &domain, &report.epsilon, per_axis)?;
    let passed = v.passed;
    let detail = format!(
        "residual {:?} at {:?} exceeds ε = {:?} on the {per_axis}-per-axis grid",
        v.worst_residual, v.worst_point, report.epsilon
    );
    report.validation = Some(v);
    if !passed {
        return Err(Error::Validation(detail));
    }
    Ok((bounds, report))
}

/// `u_max − ε` per output; fails when the error bound leaves no input.
pub fn effective_budget(s: &Scenario, epsilon: &[f64]) -> Result<Vec<f64>> {
    let u_max = s.plant.u_max();
    if let Some(e) = epsilon.iter().find(|e| !(**e < u_max)) {
        return Err(Error::Validation(format!(
            "ε exceeds input budget: ε = {e} ≥ u_max = {u_max}"
        )));
    }
    Ok(epsilon.iter().map(|e| u_max - e).collect())
}

pub fn build_controller(
    s: &Scenario,
    net: &ReluNetwork,
    u_max_eff: Vec<f64>,
) -> Result<LoopController> {
    let model = s.plant.brunovsky(s.sample_time)?;
    let input_box = s.training.input_box()?;
    let budget = s.solver.budget();
    Ok(match &s.controller {
        ControllerConfig::ClfCbf(spec) => LoopController::ClfCbf(ClfCbfController::new(
            spec.clone(),
            net.clone(),
            model,
            input_box,
            u_max_eff,
            budget,
        )?),
        ControllerConfig::Mpc(_) => {
            let spec = s.mpc_spec()?.expect("mpc controller");
            LoopController::Mpc(MpcController::new(
                spec,
                net.clone(),
                &model,
                input_box,
                u_max_eff,
                budget,
            )?)
        }
    })
}

/// Size of the encoded programs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSummary {
    pub u_max_eff: Vec<f64>,
    pub network_binaries: usize,
    pub network_free_binaries: usize,
    pub step_variables: usize,
    pub step_rows: usize,
    pub step_binaries: usize,
    pub step_free_binaries: usize,
}

/// The surrogate constraint over the whole training box and the
/// controller program at the initial state.
pub fn encoded_systems(
    s: &Scenario,
    net: &ReluNetwork,
    bounds: &NodeBounds,
    controller: &LoopController,
    u_max_eff: &[f64],
) -> Result<(MiConstraintSystem, MiConstraintSystem)> {
    let (network, _) = encode(net, bounds, u_max_eff)?;
    let step = match controller {
        LoopController::ClfCbf(c) => c.program(&s.initial_state)?,
        LoopController::Mpc(c) => c.build(&s.initial_state, 0.0)?.0,
    };
    Ok((network, step))
}

pub fn summarize_encoding(
    u_max_eff: &[f64],
    network: &MiConstraintSystem,
    step: &MiConstraintSystem,
) -> EncodingSummary {
    EncodingSummary {
        u_max_eff: u_max_eff.to_vec(),
        network_binaries: network.binary_count(),
        network_free_binaries: network.free_binary_count(),
        step_variables: step.variables().len(),
        step_rows: step.rows().len(),
        step_binaries: step.binary_count(),
        step_free_binaries: step.free_binary_count(),
    }
}

/// Writes both LP files into `out_dir`.
pub fn write_lp_files(
    network: &MiConstraintSystem,
    step: &MiConstraintSystem,
    out_dir: &Path,
) -> Result<()> {
    export_lp(network, out_dir.join(NETWORK_LP_FILE))?;
    export_lp(step, out_dir.join(STEP_LP_FILE))
}

pub fn loop_settings(s: &Scenario) -> Result<LoopSettings> {
    Ok(LoopSettings {
        initial_state: s.initial_state.clone(),
        duration: s.duration,
        sample_time: s.sample_time,
        substeps: s.substeps,
        training_box: s.training.state_box()?,
    })
}

/// Time from the start of each reference segment until the position error
/// stays below `tol` up to `lead` seconds before the next jump (the moment
/// a controller with that much preview starts anticipating it); `None` if
/// it never does. Segments start at 0 and at every jump of the target.
pub fn settle_times(
    log: &TrajectoryLog,
    reference: &Reference,
    duration: f64,
    tol: f64,
    lead: f64,
) -> Vec<(f64, Option<f64>)> {
    let mut starts = vec![0.0];
    starts.extend(reference.step_times(duration));
    let mut out = Vec::with_capacity(starts.len());
    for (i, &start) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(f64::INFINITY, |next| next - lead);
        let rows: Vec<_> = log
            .rows
            .iter()
            .filter(|r| r.t >= start - 1e-9 && r.t < end - 1e-9)
            .collect();
        let mut settled: Option<f64> = None;
        for r in &rows {
            let err = (r.z[0] - reference.target_position(r.t)).abs();
            if err < tol {
                settled.get_or_insert(r.t - start);
            } else {
                settled = None;
            }
        }
        out.push((start, settled));
    }
    out
}

pub fn build_report(s: &Scenario, log: &TrajectoryLog, epsilon: &[f64]) -> Report {
    let mut status_counts = BTreeMap::new();
    for status in [
        RowStatus::Optimal,
        RowStatus::Suboptimal,
        RowStatus::Fallback,
    ] {
        let count = log.rows.iter().filter(|r| r.status == status).count();
        status_counts.insert(status.as_str().to_string(), count);
    }
    let max_abs_u = log
        .rows
        .iter()
        .flat_map(|r| &r.u)
        .fold(0.0_f64, |a, u| a.max(u.abs()));
    let mut metrics = BTreeMap::new();
    if let Some(last) = log.rows.last() {
        metrics.insert(
            "final_state_norm".into(),
            last.z.iter().map(|z| z * z).sum::<f64>().sqrt(),
        );
    }
    match &s.controller {
        ControllerConfig::ClfCbf(spec) => {
            let clearance = log
                .rows
                .iter()
                .map(|r| {
                    r.z.iter()
                        .zip(&spec.obstacle_center)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            metrics.insert("min_obstacle_distance".into(), clearance);
        }
        ControllerConfig::Mpc(c) => {
            let pred = log
                .predictions
                .iter()
                .flat_map(|p| p.phi_nn.iter().flatten())
                .fold(0.0_f64, |a, p| a.max(p.abs()));
            metrics.insert("max_predicted_abs_phi_nn".into(), pred);
            let lead = c.horizon as f64 * s.sample_time;
            let settle = settle_times(log, &c.reference, s.duration, TRACKING_TOL, lead);
            if let Some((_, Some(t))) = settle.first() {
                metrics.insert("initial_settle_time".into(), *t);
            }
            let steps = &settle[settle.len().min(1)..];
            let untracked = steps.iter().filter(|(_, t)| t.is_none()).count();
            metrics.insert("untracked_steps".into(), untracked as f64);
            if untracked == 0 && !steps.is_empty() {
                let worst = steps.iter().filter_map(|(_, t)| *t).fold(0.0_f64, f64::max);
                metrics.insert("max_step_settle_time".into(), worst);
            }
        }
    }
    Report {
        scenario: s.name.clone(),
        plant: s.plant.name().into(),
        controller: s.controller.name().into(),
        steps: log.rows.len(),
        completed: log.abort.is_none(),
        abort: log.abort.clone(),
        u_max: s.plant.u_max(),
        epsilon: epsilon.to_vec(),
        max_abs_u,
        solve_ms: log.solve_ms(),
        nodes: Summary::of(log.rows.iter().map(|r| r.nodes as f64)),
        status_counts,
        metrics,
    }
}

/// Writes the trajectory, predictions (MPC only) and report.
pub fn write_run(s: &Scenario, log: &TrajectoryLog, report: &Report, out_dir: &Path) -> Result<()> {
    emit_csv(log, out_dir.join(TRAJECTORY_FILE))?;
    if matches!(s.controller, ControllerConfig::Mpc(_)) {
        emit_predictions_csv(log, out_dir.join(PREDICTIONS_FILE))?;
    }
    emit_report(report, out_dir.join(REPORT_FILE))
}

/// Converts a recorded abort into the matching error.
pub fn abort_error(log: &TrajectoryLog) -> Option<Error> {
    log.abort.as_ref().map(|a| {
        if a.infeasible {
            Error::InfeasibleAbort {
                time: a.t,
                consecutive: super::simulate::FALLBACK_BUDGET,
            }
        } else {
            Error::LeftDomain {
                time: a.t,
                detail: a.reason.clone(),
            }
        }
    })
}

/// Everything produced by a full run.
pub struct PipelineRun {
    pub network: ReluNetwork,
    pub fit: Option<FitReport>,
    pub bounds: NodeBounds,
    pub epsilon: ErrorBoundReport,
    pub encoding: EncodingSummary,
    pub log: TrajectoryLog,
    pub report: Report,
}

/// Artifact directory for the stage-by-stage commands.
pub struct Workspace {
    pub out_dir: PathBuf,
}

impl Workspace {
    pub fn new(out_dir: impl Into<PathBuf>) -> Result<Self> {
        let out_dir = out_dir.into();
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(Self { out_dir })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    /// The scenario's pre-trained network if set, else `network.json` here.
    pub fn network(&self, s: &Scenario) -> Result<ReluNetwork> {
        match &s.training.network {
            Some(p) => ReluNetwork::load(p),
            None => ReluNetwork::load(self.path(NETWORK_FILE)),
        }
    }

    pub fn epsilon(&self) -> Result<ErrorBoundReport> {
        ErrorBoundReport::load(self.path(EPSILON_FILE))
    }

    pub fn bounds(&self) -> Result<NodeBounds> {
        read_json(&self.path(BOUNDS_FILE))
    }

    pub fn save_training(&self, net: &ReluNetwork, fit: Option<&FitReport>) -> Result<()> {
        net.save(self.path(NETWORK_FILE))?;
        if let Some(fit) = fit {
            write_json(fit, &self.path(FIT_FILE))?;
        }
        Ok(())
    }

    pub fn save_bound(&self, bounds: &NodeBounds, eps: &ErrorBoundReport) -> Result<()> {
        write_json(bounds, &self.path(BOUNDS_FILE))?;
        eps.save(self.path(EPSILON_FILE))
    }

    pub fn save_encoding(&self, summary: &EncodingSummary) -> Result<()> {
        write_json(summary, &self.path(ENCODING_FILE))
    }
}

/// train → fbbt → ε estimate → ε validation → encode → simulate, writing
/// every artifact to `out_dir`. Stops at the first failing stage; an aborted
/// closed-loop run still writes its partial log before failing.
pub fn run_pipeline(s: &Scenario, out_dir: impl AsRef<Path>) -> Result<PipelineRun> {
    let ws = Workspace::new(out_dir.as_ref())?;
    let (network, fit) = train(s).map_err(|e| e.in_stage("train"))?;
    ws.save_training(&network, fit.as_ref())
        .map_err(|e| e.in_stage("train"))?;

    let bound_result = bound(s, &network);
    let (bounds, epsilon) = match bound_result {
        Ok(b) => b,
        Err(e) => return Err(e.in_stage("bound")),
    };
    ws.save_bound(&bounds, &epsilon)
        .map_err(|e| e.in_stage("bound"))?;

    let encode_stage = || -> Result<(LoopController, EncodingSummary)> {
        let u_eff = effective_budget(s, &epsilon.epsilon)?;
        let controller = build_controller(s, &network, u_eff.clone())?;
        let (net_sys, step_sys) = encoded_systems(s, &network, &bounds, &controller, &u_eff)?;
        write_lp_files(&net_sys, &step_sys, &ws.out_dir)?;
        let summary = summarize_encoding(&u_eff, &net_sys, &step_sys);
        ws.save_encoding(&summary)?;
        Ok((controller, summary))
    };
    let (controller, encoding) = encode_stage().map_err(|e| e.in_stage("encode"))?;

    let log =
        simulate(&s.plant, &controller, &loop_settings(s)?).map_err(|e| e.in_stage("simulate"))?;
    let report = build_report(s, &log, &epsilon.epsilon);
    write_run(s, &log, &report, &ws.out_dir).map_err(|e| e.in_stage("simulate"))?;
    if let Some(e) = abort_error(&log) {
        return Err(e.in_stage("simulate"));
    }
    Ok(PipelineRun {
        network,
        fit,
        bounds,
        epsilon,
        encoding,
        log,
        report,
    })
}
