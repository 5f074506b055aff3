use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::envs::Modality;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{modality} observation: expected {expected}, got {got}")]
    ObservationShape { modality: Modality, expected: String, got: String },
    #[error("invalid action {action}: environment has {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what}: {detail}")]
    NonFinite { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
