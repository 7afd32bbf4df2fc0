use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("irregular sampling at row {line}: expected {expected_minutes} min spacing, found {found_minutes} min")]
    IrregularSampling {
        line: usize,
        expected_minutes: i64,
        found_minutes: i64,
    },

    #[error("series is empty")]
    EmptySeries,

    #[error("invalid split fractions {0:?}: must be positive and sum to 1")]
    FractionSum((f64, f64, f64)),

    #[error("series too short: {what} has {rows} rows, need at least {needed}")]
    TooShort {
        what: String,
        rows: usize,
        needed: usize,
    },

    #[error("attribute `{0}` is constant on the training split")]
    ConstantAttribute(String),

    #[error("timestamps of series {0} do not match the first series")]
    TimestampMismatch(usize),

    #[error("unknown attack kind `{0}`")]
    UnknownKind(String),

    #[error("window of {len} samples cannot hold a {needed}-sample bypass interval")]
    WindowTooShortForBypass { len: usize, needed: usize },

    #[error("bad range: {0}")]
    BadRange(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("diffusion step {step} outside 0..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("partial diffusion needs the observed horizon")]
    MissingObservedHorizon,

    #[error("no validation scores to calibrate on")]
    EmptyValidation,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::ShapeMismatch { expected, found }
    }
}

/// Attaches a pipeline stage name to errors bubbling out of a run.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
