use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the abstraction, graph and discovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval: start {start} must be strictly less than end {end}")]
    InvalidInterval { start: f64, end: f64 },

    #[error("series for `{variable}` has {len} sample(s); at least 2 are needed")]
    SeriesTooShort { variable: String, len: usize },

    #[error("state and gradient tilings disagree on span: [{state_start}, {state_end}] vs [{gradient_start}, {gradient_end}]")]
    SpanMismatch {
        state_start: f64,
        state_end: f64,
        gradient_start: f64,
        gradient_end: f64,
    },

    #[error("invalid knowledge base rule for `{variable}`: {reason}")]
    InvalidRule { variable: String, reason: String },

    #[error("label `{0}` is not a node of the graph")]
    LabelNotPresent(String),

    #[error("lexicon would hold more than {cap} entries; restrict the template universe or lower K_max")]
    LexiconTooLarge { cap: usize },

    #[error("graph label `{0}` is outside the lexicon universe")]
    UniverseMismatch(String),

    #[error("subgraph entry is not contained in both graphs")]
    NotContained,

    #[error("no discovery candidates were generated")]
    NoCandidates,

    #[error("non-finite interpretation score: {0}")]
    NonFiniteScore(String),

    #[error("planted pattern `{0}` is unsatisfiable")]
    InfeasiblePlant(String),

    #[error("invalid synthetic cohort spec: {0}")]
    InvalidSpec(String),

    #[error("duplicate object id `{0}`")]
    DuplicateObjectId(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: unknown variable `{variable}`")]
    UnknownVariable {
        path: String,
        line: usize,
        variable: String,
    },

    #[error("input `{0}` contains no samples")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
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

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code for this error class. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::UnknownVariable { .. } | Error::EmptyInput(_) => 3,
            Error::Io { .. } => 4,
            Error::Json(_) | Error::Csv(_) => 5,
            Error::InvalidRule { .. } => 6,
            Error::LexiconTooLarge { .. } | Error::UniverseMismatch(_) => 7,
            Error::NoCandidates | Error::NonFiniteScore(_) => 8,
            Error::InfeasiblePlant(_) | Error::InvalidSpec(_) => 9,
            Error::DuplicateObjectId(_) => 10,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
