//! Error types shared across the engine.

use thiserror::Error;

/// Query text rejected by the lexer or parser.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("syntax error at line {line}, column {column}: {message}")]
pub struct SyntaxError {
    pub message: String,
    /// Byte offset into the query text.
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl SyntaxError {
    pub fn at(message: &str, source: &str, offset: usize) -> Self {
        let clamped = offset.min(source.len());
        let prefix = &source[..clamped];
        let line = prefix.bytes().filter(|&b| b == b'\n').count() + 1;
        let column = clamped - prefix.rfind('\n').map_or(0, |p| p + 1) + 1;
        SyntaxError { message: message.to_string(), offset: clamped, line, column }
    }

    /// Error at the end of the input.
    pub fn eof(message: &str, source: &str) -> Self {
        SyntaxError::at(message, source, source.len())
    }
}

/// Planner rejected a structurally valid query (missing tables, unresolvable
/// anchors, malformed ingredient arguments discovered at plan time).
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("plan error: {0}")]
pub struct PlanError(pub String);

/// Model backend failure.
#[derive(Debug, Error)]
pub enum BlenderError {
    #[error("no recorded response for prompt (key {key})")]
    NoMatch { key: String },
    #[error("backend request failed: {0}")]
    Request(String),
    #[error("backend timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("backend rate-limited the request: {0}")]
    RateLimited(String),
    #[error("backend returned malformed payload: {0}")]
    Payload(String),
    #[error("response violated constraint after retry: {0}")]
    ConstraintViolation(String),
}

/// Runtime failure while executing a planned query.
#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("storage error: {0}")]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Blender(#[from] BlenderError),
    #[error("execution error: {0}")]
    Other(String),
}

impl From<rusqlite::Error> for ExecError {
    fn from(e: rusqlite::Error) -> Self {
        ExecError::Storage(StorageError::Sqlite(e))
    }
}

/// Database open/ingest/search failure.
#[derive(Debug, Error)]
pub enum StorageError {
    #[error(transparent)]
    Sqlite(#[from] rusqlite::Error),
    #[error("not a database: {0}")]
    NotADatabase(String),
    #[error("full-text match syntax error: {0}")]
    FtsSyntax(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
