use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the pipeline. I/O and CSV transport
/// failures are kept separate from validation failures so callers (the CLI in
/// particular) can map them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate category {0:?}")]
    DuplicateCategory(String),

    #[error("duplicate value {value:?} in category {category:?}")]
    DuplicateValue { category: String, value: String },

    #[error("unknown value {value:?} for category {category:?}")]
    UnknownValue { category: String, value: String },

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("hierarchy for category {category:?} is cyclic at node {node:?}")]
    CyclicHierarchy { category: String, node: String },

    #[error("hierarchy for category {category:?} is partial: value {value:?} has no parent")]
    PartialHierarchy { category: String, value: String },

    #[error("{0:?} is reserved and may not be declared as a schema value")]
    ReservedCode(String),

    #[error("invalid code {0:?}: codes must be non-empty and free of '|', '=', '*'")]
    InvalidCode(String),

    #[error("stratum text {text:?} does not match the schema: {message}")]
    BadStratum { text: String, message: String },

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("row {row}: {reason}")]
    StrictReject { row: u64, reason: String },

    #[error("negative population for stratum {0:?}")]
    NegativePopulation(String),

    #[error("duplicate population row for stratum {0:?}")]
    DuplicateStratum(String),

    #[error("population table has no world total (all-wildcard row)")]
    MissingWorldTotal,

    #[error("world total must be positive")]
    ZeroWorldTotal,

    #[error("population for {stratum:?} ({count}) exceeds the world total ({world})")]
    PopulationExceedsWorld {
        stratum: String,
        count: u64,
        world: u64,
    },

    #[error("marginals for category {category:?} sum to {sum}, above the world total {world}")]
    MarginalsExceedWorld {
        category: String,
        sum: u64,
        world: u64,
    },

    #[error("population table is empty")]
    EmptyTable,

    #[error("missing marginal population for value {value:?} of category {category:?}")]
    MissingMarginal { category: String, value: String },

    #[error("no contributors recorded; cannot derive priors for population-unavailable values")]
    NoContributors,

    #[error("no records remain after filtering; nothing to aggregate")]
    EmptyInput,

    #[error("zero population for group {node:?} at the configured boost level")]
    ZeroPopulationAtBoostLevel { node: String },

    #[error("joint boost mode needs exactly one boosted category, found {0}")]
    JointBoostAmbiguous(usize),

    #[error("boost factor missing for stratum {0:?}")]
    MissingAlpha(String),

    #[error("scores must be normalized (sum to 1) before this operation")]
    UnnormalizedScores,

    #[error("differential-privacy noise requires epsilon to be configured")]
    MissingEpsilon,

    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),

    #[error(
        "class sets differ: {only_left} classes only on the left, {only_right} only on the right"
    )]
    ClassSetMismatch { only_left: usize, only_right: usize },

    #[error("k must be at least 1")]
    BadK,

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// True when the failure came from the host I/O layer (missing file,
    /// permission, short read) rather than from the content of the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}
