use std::path::PathBuf;

use thiserror::Error;

use ringhil_core::advisory::AdvisoryError;
use ringhil_core::episode::EpisodeError;
use ringhil_core::metrics::LogError;
use ringhil_core::scenario::ScenarioError;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse session config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("connection refused by server: {0}")]
    Refused(String),
    #[error("no client connected within {0:.1} s")]
    ClientTimeout(f64),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Advisory(#[from] AdvisoryError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    WebSocket(Box<tokio_tungstenite::tungstenite::Error>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<tokio_tungstenite::tungstenite::Error> for SessionError {
    fn from(e: tokio_tungstenite::tungstenite::Error) -> Self {
        SessionError::WebSocket(Box::new(e))
    }
}
