use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Fit,
}

#[derive(Debug, Error)]
pub enum Error {
    // dataset
    #[error("missing value at row {row}, column {col}")]
    MissingValue { row: usize, col: String },
    #[error("duplicate rows: {0:?}")]
    DuplicateRows(Vec<usize>),
    #[error("unknown target column `{0}`")]
    UnknownTarget(String),
    #[error("cannot parse value at row {row}, column {col}: {detail}")]
    ParseError { row: usize, col: String, detail: String },
    #[error("stratification bin {0} has fewer than two rows")]
    BinTooSmall(usize),
    #[error("requested subset of {requested} rows from a dataset of {available}")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // features
    #[error("source column `{0}` is missing")]
    MissingSourceColumn(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    // preprocess
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("column `{0}` has degenerate scaling statistics")]
    DegenerateColumn(String),

    // kernel / models
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("gamma=scale is undefined for a constant feature matrix")]
    ZeroVariance,
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("least-squares system is rank deficient")]
    SingularSystem,
    #[error("k={k} exceeds the {n} available items")]
    KTooLarge { k: usize, n: usize },

    // evaluation
    #[error("MAPE undefined: target is zero at row {0}")]
    ZeroTarget(usize),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    // model selection / ablation
    #[error("n_iter={n_iter} exceeds the grid size {grid}")]
    GridTooSmall { n_iter: usize, grid: usize },
    #[error("ablation stage {stage}: {source}")]
    Stage {
        stage: char,
        #[source]
        source: Box<Error>,
    },

    // experiment harness
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("missing or stale artifact for stage `{stage}`: {reason}")]
    MissingArtifact { stage: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ConfigInvalid(_) | Error::MissingArtifact { .. } => ErrorClass::Config,
            Error::InvalidArgument(_) | Error::GridTooSmall { .. } => ErrorClass::Config,
            Error::Fold { source, .. } | Error::Stage { source, .. } => source.class(),
            Error::SingularSystem | Error::ZeroVariance | Error::NonFiniteInput(_) => ErrorClass::Fit,
            _ => ErrorClass::Data,
        }
    }
}
