use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Schema mismatch, arity mismatch, duplicate columns and similar shape errors.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("unbound variable `{0}`")]
    Binding(String),

    #[error("arithmetic error: {0}")]
    Arithmetic(String),

    #[error("type error: {0}")]
    Type(String),

    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },

    #[error("unsupported construct: {0}")]
    Unsupported(String),

    #[error("compiler bug: {0}")]
    Compile(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown view `{0}`")]
    UnknownView(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn parse(line: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            col,
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
