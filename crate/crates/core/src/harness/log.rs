use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Optimal,
    Suboptimal,
    /// Controller infeasible; the previous physical input was held.
    Fallback,
}

impl RowStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowStatus::Optimal => "optimal",
            RowStatus::Suboptimal => "suboptimal",
            RowStatus::Fallback => "fallback",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "optimal" => Some(RowStatus::Optimal),
            "suboptimal" => Some(RowStatus::Suboptimal),
            "fallback" => Some(RowStatus::Fallback),
            _ => None,
        }
    }
}

/// One control period: the state sampled at `t` and the input applied on
/// `[t, t + t_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Physical plant state.
    pub x: Vec<f64>,
    /// Flat coordinates.
    pub z: Vec<f64>,
    /// Virtual input; NaN on fallback rows.
    pub v: Vec<f64>,
    /// Applied physical input.
    pub u: Vec<f64>,
    /// Surrogate output at the solution; NaN on fallback rows.
    pub phi_nn: Vec<f64>,
    /// CLF slack (CLF-CBF only, NaN otherwise).
    pub delta: f64,
    /// Largest `|Φ_NN|` over the predicted stages (MPC only, NaN otherwise).
    pub pred_max_abs_phi_nn: f64,
    pub status: RowStatus,
    pub nodes: usize,
    pub ms: f64,
}

/// Predicted trajectory of one MPC step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub step: usize,
    pub t: f64,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub phi_nn: Vec<Vec<f64>>,
    pub shift_feasible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub t: f64,
    pub reason: String,
    /// Whether the abort came from repeated controller infeasibility (as
    /// opposed to leaving the training box).
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub state_dim: usize,
    pub input_dim: usize,
    pub rows: Vec<LogRow>,
    pub predictions: Vec<Prediction>,
    pub abort: Option<Abort>,
}

impl TrajectoryLog {
    pub fn new(state_dim: usize, input_dim: usize) -> Self {
        Self {
            state_dim,
            input_dim,
            rows: Vec::new(),
            predictions: Vec::new(),
            abort: None,
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..self.state_dim).map(|i| format!("x{i}")));
        h.extend((0..self.state_dim).map(|i| format!("z{i}")));
        h.extend((0..self.input_dim).map(|i| format!("v{i}")));
        h.extend((0..self.input_dim).map(|i| format!("u{i}")));
        h.extend((0..self.input_dim).map(|i| format!("phi_nn{i}")));
        h.extend(["delta", "pred_max_abs_phi_nn", "status", "nodes", "ms"].map(String::from));
        h
    }

    pub fn solve_ms(&self) -> Summary {
        Summary::of(self.rows.iter().map(|r| r.ms))
    }
}

/// `min / max / mean` of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut min, mut max, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0);
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            count += 1;
        }
        if count == 0 {
            return Self {
                min: 0.0,
                max: 0.0,
                mean: 0.0,
                count,
            };
        }
        Self {
            min,
            max,
            mean: sum / count as f64,
            count,
        }
    }
}

/// Run summary written next to the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub plant: String,
    pub controller: String,
    pub steps: usize,
    pub completed: bool,
    pub abort: Option<Abort>,
    pub u_max: f64,
    pub epsilon: Vec<f64>,
    pub max_abs_u: f64,
    /// Solve time per control step in milliseconds.
    pub solve_ms: Summary,
    pub nodes: Summary,
    pub status_counts: BTreeMap<String, usize>,
    /// Controller-specific figures (obstacle clearance, tracking, ...).
    pub metrics: BTreeMap<String, f64>,
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn emit_csv(log: &TrajectoryLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(log.header())?;
    for r in &log.rows {
        let mut rec: Vec<String> = vec![r.t.to_string()];
        for part in [&r.x, &r.z, &r.v, &r.u, &r.phi_nn] {
            rec.extend(part.iter().map(f64::to_string));
        }
        rec.push(r.delta.to_string());
        rec.push(r.pred_max_abs_phi_nn.to_string());
        rec.push(r.status.as_str().to_string());
        rec.push(r.nodes.to_string());
        rec.push(r.ms.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a CSV written by [`emit_csv`].
pub fn read_csv(
    path: impl AsRef<Path>,
    state_dim: usize,
    input_dim: usize,
) -> Result<TrajectoryLog> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut log = TrajectoryLog::new(state_dim, input_dim);
    let expected = log.header();
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header != expected {
        return Err(write_err(path, format!("unexpected header {header:?}")));
    }
    for rec in reader.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| write_err(path, format!("column {i}: {e}")))
        };
        let mut at = 0;
        let mut take = |k: usize| -> Result<Vec<f64>> {
            let out = (at..at + k).map(&num).collect::<Result<Vec<f64>>>();
            at += k;
            out
        };
        let t = take(1)?[0];
        let x = take(state_dim)?;
        let z = take(state_dim)?;
        let v = take(input_dim)?;
        let u = take(input_dim)?;
        let phi_nn = take(input_dim)?;
        let delta = take(1)?[0];
        let pred = take(1)?[0];
        let status = RowStatus::parse(&rec[at]).ok_or_else(|| write_err(path, "bad status"))?;
        let nodes = rec[at + 1].parse().map_err(|e| write_err(path, e))?;
        let ms = num(at + 2)?;
        log.rows.push(LogRow {
            t,
            x,
            z,
            v,
            u,
            phi_nn,
            delta,
            pred_max_abs_phi_nn: pred,
            status,
            nodes,
            ms,
        });
    }
    Ok(log)
}

/// Writes every MPC prediction as `step, stage, t, z..., v..., phi_nn...`;
/// the terminal stage has no input.
pub fn emit_predictions_csv(log: &TrajectoryLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["step".to_string(), "stage".into(), "t".into()];
    header.extend((0..log.state_dim).map(|i| format!("z{i}")));
    header.extend((0..log.input_dim).map(|i| format!("v{i}")));
    header.extend((0..log.input_dim).map(|i| format!("phi_nn{i}")));
    w.write_record(&header)?;
    for p in &log.predictions {
        for (k, z) in p.states.iter().enumerate() {
            let mut rec = vec![p.step.to_string(), k.to_string(), p.t.to_string()];
            rec.extend(z.iter().map(f64::to_string));
            let pad = |v: Option<&Vec<f64>>| match v {
                Some(v) => v.iter().map(f64::to_string).collect::<Vec<_>>(),
                None => vec![String::new(); log.input_dim],
            };
            rec.extend(pad(p.inputs.get(k)));
            rec.extend(pad(p.phi_nn.get(k)));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn emit_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(path, e))
}
