use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("invalid footprint: {0}")]
    InvalidFootprint(String),

    #[error("invalid connection pair: {0}")]
    InvalidPair(String),

    #[error("infeasible target configuration: {0}")]
    InfeasibleTarget(String),

    #[error("invalid MPC configuration: {0}")]
    InvalidMpcConfig(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
