//! Scenario files, closed-loop simulation, the end-to-end pipeline and its
//! artifacts.

mod log;
mod pipeline;
mod scenario;
mod simulate;

pub use log::{
    emit_csv, emit_predictions_csv, emit_report, read_csv, Abort, LogRow, Prediction, Report,
    RowStatus, Summary, TrajectoryLog,
};
pub use pipeline::{
    abort_error, bound, build_controller, build_report, effective_budget, encoded_systems,
    loop_settings, run_pipeline, settle_times, summarize_encoding, train, write_lp_files,
    write_run, EncodingSummary, PipelineRun, Workspace, BOUNDS_FILE, ENCODING_FILE, EPSILON_FILE,
    FIT_FILE, NETWORK_FILE, NETWORK_LP_FILE, PREDICTIONS_FILE, REPORT_FILE, STEP_LP_FILE,
    TRACKING_TOL, TRAJECTORY_FILE,
};
pub use scenario::{BoundSpec, ControllerConfig, MpcConfig, Scenario, SolverConfig, TrainingSpec};
pub use simulate::{simulate, LoopController, LoopSettings, FALLBACK_BUDGET};
