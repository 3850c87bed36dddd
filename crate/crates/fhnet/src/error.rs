use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Core {
        path: PathBuf,
        source: fhnet_core::Error,
    },
    #[error(transparent)]
    Model(#[from] fhnet_core::Error),
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint: {0}")]
    Version(String),
    #[error("checkpoint does not fit the data: {0}")]
    Compatibility(String),
    #[error("{count} segment(s) fail the quality filter:\n{listing}")]
    Unfiltered { count: usize, listing: String },
    #[error("{path}, line {line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}
