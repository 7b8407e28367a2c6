use thiserror::Error;

use crate::llm::GatewayError;
use crate::prompt::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("feature schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("requested {clusters} clusters but only {points} vectors are available")]
    TooFewPoints { clusters: usize, points: usize },

    #[error("requested {requested} demonstrations but only {available} accepted entries are available")]
    NotEnoughDemonstrations { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty description")]
    EmptyDescription,

    #[error("entry {0} not accepted")]
    NotAccepted(String),

    #[error("prompt of {chars} characters exceeds the limit of {limit}")]
    PromptTooLong { chars: usize, limit: usize },

    #[error("could not parse response: {source}; raw response: {raw:?}")]
    Unparseable {
        #[source]
        source: ParseError,
        raw: String,
    },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Short stable identifier used by the command line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyCorpus | Error::Corpus { .. } => "corpus",
            Error::SchemaMismatch { .. } | Error::LengthMismatch { .. } => "schema",
            Error::TooFewPoints { .. } | Error::NotEnoughDemonstrations { .. } => "retrieval",
            Error::Config(_) => "config",
            Error::Precondition(_) => "precondition",
            Error::EmptyDescription => "description",
            Error::NotAccepted(_) => "not_accepted",
            Error::PromptTooLong { .. } => "prompt_too_long",
            Error::Unparseable { .. } | Error::Parse(_) => "parse",
            Error::Gateway(_) => "gateway",
            Error::Io { .. } => "io",
        }
    }
}
