use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid is empty: {0}")]
    EmptyGrid(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("row count mismatch: {left} has {left_rows} rows, {right} has {right_rows}")]
    RowCount {
        left: PathBuf,
        left_rows: usize,
        right: PathBuf,
        right_rows: usize,
    },

    #[error("ill-posed fit: {0}")]
    IllPosed(String),

    #[error("no unsampled cells left to query")]
    Exhausted,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("setup error: {0}")]
    Setup(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }
}
