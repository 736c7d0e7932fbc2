use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The exact map produced a non-finite value while sampling.
    #[error("non-finite target value at sample point {point:?}")]
    Data { point: Vec<f64> },

    #[error("malformed network file (layer {layer}): {message}")]
    Parse { layer: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("feedback-linearization map is singular: |zeta| = {zeta} is too close to 1")]
    Singularity { zeta: f64 },

    #[error(
        "exact map failed inside the search domain at {point:?} ({reason}); use a smaller box"
    )]
    Domain { point: Vec<f64>, reason: String },

    #[error("geometric degeneracy: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("brute-force enumeration refused: {count} free binaries exceeds the limit of {max}")]
    TooManyBinaries { count: usize, max: usize },

    #[error("LP file parse error at line {line}: {message}")]
    LpParse { line: usize, message: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("controller infeasible for {consecutive} consecutive steps at t = {time}")]
    InfeasibleAbort { time: f64, consecutive: usize },

    #[error("plant left the training box at t = {time}: {detail}")]
    LeftDomain { time: f64, detail: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
