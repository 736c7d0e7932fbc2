use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny_msd"
initial_state = [0.0, 2.0]
duration = 0.2
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

fn flmip(args: &[&str], scenario: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flmip"))
        .args(args)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn write_scenario(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn stages_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), TINY);
    let out = dir.path().join("out");
    for stage in ["train", "bound", "encode", "export-lp", "simulate"] {
        let o = flmip(&[stage], &scenario, &out);
        assert!(
            o.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for f in [
        "network.json",
        "epsilon.json",
        "bounds.json",
        "encoding.json",
        "network.lp",
        "controller_step0.lp",
        "trajectory.csv",
        "report.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), TINY);
    let o = flmip(
        &["pipeline", "--seed", "1"],
        &scenario,
        &dir.path().join("out"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("eps ="));
}

#[test]
fn error_bound_above_budget_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &TINY.replace("u_max = 5.0", "u_max = 1e-4"));
    let o = flmip(&["pipeline"], &scenario, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ε exceeds input budget"));
}

#[test]
fn leaving_the_training_box_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("initial_state = [0.0, 2.0]", "initial_state = [4.9, 4.9]");
    let scenario = write_scenario(dir.path(), &text);
    let out = dir.path().join("out");
    let o = flmip(&["pipeline"], &scenario, &out);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn bad_scenario_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "name = \"broken\"");
    let o = flmip(&["train"], &scenario, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn simulate_without_artifacts_fails() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), TINY);
    let o = flmip(&["simulate"], &scenario, &dir.path().join("empty"));
    assert_eq!(o.status.code(), Some(1));
}
