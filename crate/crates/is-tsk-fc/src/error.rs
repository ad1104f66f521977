use std::path::PathBuf;

/// Errors produced by the clustering library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}, line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}, line {line}, column {column}: {message}")]
    Cell {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fcm: {0}")]
    Fcm(String),

    #[error("solver: {0}")]
    Solver(String),

    #[error(
        "style update produced non-finite values at inner iteration {iteration}; \
         lambda = {lambda:e} is too small for the data scale"
    )]
    NonFiniteStyle { iteration: usize, lambda: f64 },

    #[error("round {round}, cluster {cluster}: {source}")]
    Round {
        round: usize,
        cluster: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("experiment: {0}")]
    Experiment(String),
}

pub type Result<T> = std::result::Result<T, Error>;
