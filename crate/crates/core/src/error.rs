use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("NaN or infinite gradient for parameter {0}")]
    NanGradient(String),

    #[error("unknown phase {phase} in plan {plan}")]
    UnknownPhase { plan: String, phase: String },
    #[error("unknown plan {plan} for intersection {intersection}")]
    UnknownPlan { intersection: String, plan: String },
    #[error("detector {detector} references unknown intersection {intersection}")]
    UnknownIntersection {
        detector: String,
        intersection: String,
    },
    #[error("unknown detector {0}")]
    UnknownDetector(String),
    #[error("invalid signal plan: {0}")]
    InvalidPlan(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("detector {0} has zero out-degree and the normalization guard is disabled")]
    ZeroDegree(String),
    #[error("restart probability must lie in (0, 1], got {0}")]
    RestartProbability(f64),
    #[error("empty detector subset")]
    EmptySubset,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("health calendar has no entry for detector {detector} on {date}")]
    CalendarGap { detector: String, date: String },
    #[error("plan period of {points} points is shorter than horizon {horizon}")]
    PeriodTooShort { points: usize, horizon: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error("invalid config: {0}")]
    Config(String),

    #[error("graph fingerprint mismatch: checkpoint {expected}, data {found}")]
    Fingerprint { expected: String, found: String },
    #[error("training targets are required in training mode")]
    MissingTargets,
    #[error("NaN loss at epoch {epoch}, batch {batch} (lr {lr})")]
    NanLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("no historical observation for weekday {weekday} slot {slot}")]
    NoHistory { weekday: u32, slot: usize },
    #[error("not enough training data: {0}")]
    InsufficientData(String),

    #[error("empty input to metric")]
    EmptyMetric,
    #[error("missing checkpoint for {0}")]
    MissingCheckpoint(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_string(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
