use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: operand shapes do not conform: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar output node, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("node {id} was not recorded on this tape")]
    NodeNotOnTape { id: usize },

    #[error("embedding dimension mismatch: model expects {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("class {class} out of range for a {classes}-class model")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("operation requires the attention architecture, model is {found}")]
    WrongArchitecture { found: &'static str },

    #[error("gradient norm below {threshold:e}; no perturbation direction exists")]
    ZeroGradient { threshold: f64 },

    #[error("attribution carries neither a perturbation nor a nonzero score; cannot realize it")]
    Unrealizable,

    #[error("word position {position} out of range for text of length {len}")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("seed token {token:?} is not in the vocabulary")]
    UnknownSeedToken { token: String },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rationale file not found: {path}")]
    MissingRationale { path: String },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
