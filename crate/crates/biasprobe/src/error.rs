use std::path::{Path, PathBuf};

use biasprobe_backend::BackendError;
use biasprobe_core::colorimetry::ColorimetryError;
use biasprobe_core::tables::AggregateError;
use biasprobe_core::{CompositeError, ImageError, ManifestError, MetricsError, PromptError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("identity {identity_id} has {have} images, {need} required")]
    InsufficientImages { identity_id: String, have: usize, need: usize },
    #[error("label `{0}` is not one of the manifest's gender labels")]
    UnknownLabel(String),
    #[error("ledger is incomplete: {0}")]
    IncompleteLedger(String),
    #[error("run directory {path} was created from a different manifest")]
    ManifestMismatch { path: PathBuf },
    #[error("ITA for {context}: {source}")]
    Colorimetry { context: String, source: ColorimetryError },
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl AuditError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AuditError + '_ {
        move |source| AuditError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code: 2 for backend failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Backend(_) => 2,
            _ => 1,
        }
    }
}
