use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no pairs")]
    NoPairs,

    #[error("invalid treatment pattern in pair '{0}': exactly one unit must be treated")]
    InvalidTreatmentPattern(String),

    #[error("pair '{pair}' has {count} unit(s); every pair needs exactly 2")]
    PairSize { pair: String, count: usize },

    #[error("pair '{pair}' has unit labels {labels:?}; expected 1 and 2")]
    UnitLabels { pair: String, labels: [u8; 2] },

    #[error("row {row}, column '{column}': {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("no covariate columns; covariate-free analysis must be requested explicitly")]
    NoCovariates,

    #[error("covariate dimension mismatch: expected {expected}, found {found}")]
    CovariateDimension { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("at least 2 pairs are required, found {0}")]
    TooFewPairs(usize),

    #[error("fit failed with pair {pair} left out: {source}")]
    PairFit {
        pair: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate assignment: variance undefined")]
    DegenerateAssignment,

    #[error("{0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_pair(self, pair: usize) -> Error {
        match self {
            e @ Error::PairFit { .. } => e,
            other => Error::PairFit {
                pair,
                source: Box::new(other),
            },
        }
    }
}
