use std::path::Path;

use flmip::harness::{
    emit_csv, read_csv, run_pipeline, LogRow, RowStatus, Scenario, TrajectoryLog, EPSILON_FILE,
    NETWORK_FILE, REPORT_FILE, TRAJECTORY_FILE,
};
use flmip::Error;
use proptest::prelude::*;

const TINY: &str = r#"
name = "tiny_msd"
initial_state = [0.0, 2.0]
duration = 0.3
sample_time = 0.05
substeps = 5
seed = 1

[plant]
kind = "msd"
u_max = 5.0

[training]
state_radius = [5.0, 5.0]
input_radius = [10.0]
samples_per_axis = 10
layers = 2
width = 6

[training.optimizer]
epochs = 300
learning_rate = 1e-2
batch_size = 32

[bound]
validation_factor = 2

[bound.pso]
particles = 60
iterations = 60
restarts = 2
grid_per_axis = 8
margin = 0.3

[controller]
kind = "clf_cbf"
p = [[4.58, 10.0], [10.0, 45.83]]
obstacle_center = [1.5, 1.0]
obstacle_radius = 0.8
kappa = 4.0
beta = 0.001
cost = "Qcost"
feedback_gain = [[4.47, 3.37]]

[solver]
max_nodes = 50
"#;

fn tiny() -> Scenario {
    Scenario::from_toml(TINY).unwrap()
}

/// Rows with the timing column cleared, formatted so NaN compares equal.
fn without_ms(log: &TrajectoryLog) -> Vec<String> {
    log.rows
        .iter()
        .cloned()
        .map(|r| format!("{:?}", LogRow { ms: 0.0, ..r }))
        .collect()
}

#[test]
fn pipeline_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let s = tiny();
    let run = run_pipeline(&s, dir.path()).unwrap();
    for f in [NETWORK_FILE, EPSILON_FILE, TRAJECTORY_FILE, REPORT_FILE] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(run.log.rows.len(), s.steps() + 1);
    assert!(run.report.completed);
    let u_eff = 5.0 - run.epsilon.epsilon[0];
    for r in &run.log.rows {
        assert_ne!(r.status, RowStatus::Fallback);
        assert_eq!(r.u[0], s.plant.phi(&r.z, r.v[0]).unwrap());
        let nn = run.network.forward(&[r.z[0], r.z[1], r.v[0]]).unwrap()[0];
        assert!((nn - r.phi_nn[0]).abs() <= 1e-6 * (1.0 + nn.abs()));
        assert!(nn.abs() <= u_eff * (1.0 + 1e-7) + 1e-7);
        assert!(r.u[0].abs() <= 5.0);
    }
    let back = read_csv(dir.path().join(TRAJECTORY_FILE), 2, 1).unwrap();
    assert_eq!(back.rows.len(), run.log.rows.len());
    for (a, b) in back.rows.iter().zip(&run.log.rows) {
        assert_eq!(a.z, b.z);
        assert_eq!(a.u, b.u);
    }
}

#[test]
fn reruns_match_except_timing() {
    let s = tiny();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(&s, a.path()).unwrap();
    let rb = run_pipeline(&s, b.path()).unwrap();
    assert_eq!(ra.network, rb.network);
    assert_eq!(ra.epsilon, rb.epsilon);
    assert_eq!(without_ms(&ra.log), without_ms(&rb.log));
}

#[test]
fn pretrained_network_skips_training() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(&tiny(), dir.path().join("a")).unwrap();
    let toml = TINY.replace("width = 6", "width = 6\nnetwork = \"a/network.json\"");
    let path = dir.path().join("s.toml");
    std::fs::write(&path, toml).unwrap();
    let s = Scenario::load(&path).unwrap();
    let second = run_pipeline(&s, dir.path().join("b")).unwrap();
    assert!(second.fit.is_none());
    assert_eq!(second.network, first.network);
}

#[test]
fn error_bound_above_budget_is_a_validation_failure() {
    let s = Scenario::from_toml(&TINY.replace("u_max = 5.0", "u_max = 1e-4")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let Err(err) = run_pipeline(&s, dir.path()) else {
        panic!("pipeline accepted ε ≥ u_max");
    };
    assert!(matches!(err.root(), Error::Validation(_)));
    assert!(err.to_string().contains("ε exceeds input budget"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_network_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(
        &path,
        TINY.replace("width = 6", "width = 6\nnetwork = \"nope.json\""),
    )
    .unwrap();
    assert!(Scenario::load(Path::new(&path)).is_err());
}

fn row_strategy() -> impl Strategy<Value = LogRow> {
    let f = prop_oneof![4 => -1e6..1e6f64, 1 => Just(f64::NAN), 1 => -1e-300..1e-300f64];
    (
        0.0..100.0f64,
        prop::collection::vec(f.clone(), 13),
        prop::sample::select(vec![
            RowStatus::Optimal,
            RowStatus::Suboptimal,
            RowStatus::Fallback,
        ]),
        0usize..10_000,
        0.0..1e4f64,
    )
        .prop_map(|(t, v, status, nodes, ms)| LogRow {
            t,
            x: v[0..3].to_vec(),
            z: v[3..6].to_vec(),
            v: v[6..7].to_vec(),
            u: v[7..8].to_vec(),
            phi_nn: v[8..9].to_vec(),
            delta: v[9],
            pred_max_abs_phi_nn: v[10],
            status,
            nodes,
            ms,
        })
}

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * (1.0 + a.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(rows in prop::collection::vec(row_strategy(), 0..20)) {
        let mut log = TrajectoryLog::new(3, 1);
        log.rows = rows;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        emit_csv(&log, &path).unwrap();
        let back = read_csv(&path, 3, 1).unwrap();
        prop_assert_eq!(back.rows.len(), log.rows.len());
        for (a, b) in log.rows.iter().zip(&back.rows) {
            let fa: Vec<f64> = [a.t, a.delta, a.pred_max_abs_phi_nn, a.ms].into_iter()
                .chain(a.x.iter().chain(&a.z).chain(&a.v).chain(&a.u).chain(&a.phi_nn).copied()).collect();
            let fb: Vec<f64> = [b.t, b.delta, b.pred_max_abs_phi_nn, b.ms].into_iter()
                .chain(b.x.iter().chain(&b.z).chain(&b.v).chain(&b.u).chain(&b.phi_nn).copied()).collect();
            prop_assert!(fa.iter().zip(&fb).all(|(x, y)| same(*x, *y)));
            prop_assert_eq!((a.status, a.nodes), (b.status, b.nodes));
        }
    }
}
