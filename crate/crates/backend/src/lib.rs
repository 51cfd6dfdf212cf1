//! Model backends for the audit harness.
//!
//! [`Backend`] is the four-call protocol (generate, edit, zero-shot label,
//! denoising loss). [`HttpBackend`] speaks it over HTTP to any conforming
//! server; [`MockModel`] is a deterministic in-process implementation that
//! [`serve_mock`] also exposes over HTTP.

mod client;
mod error;
mod mock;
mod server;

use async_trait::async_trait;
use biasprobe_core::protocol::{DenoiseLossRequest, EditRequest, GenerateRequest, LabelRequest, LabelResponse};
use biasprobe_core::ImageRecord;

pub use client::{ClientConfig, HttpBackend};
pub use error::BackendError;
pub use mock::{prompt_matches, tokens, BiasTable, LabelRule, LossRule, MockModel};
pub use server::{router, serve_mock, MockServer, ServeError};

/// The model-facing protocol. Every call is idempotent.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn generate(&self, req: &GenerateRequest) -> Result<Vec<ImageRecord>, BackendError>;
    async fn edit(&self, req: &EditRequest) -> Result<ImageRecord, BackendError>;
    async fn zero_shot_label(&self, req: &LabelRequest) -> Result<LabelResponse, BackendError>;
    async fn denoise_loss(&self, req: &DenoiseLossRequest) -> Result<f64, BackendError>;
}

#[async_trait]
impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    async fn generate(&self, req: &GenerateRequest) -> Result<Vec<ImageRecord>, BackendError> {
        (**self).generate(req).await
    }
    async fn edit(&self, req: &EditRequest) -> Result<ImageRecord, BackendError> {
        (**self).edit(req).await
    }
    async fn zero_shot_label(&self, req: &LabelRequest) -> Result<LabelResponse, BackendError> {
        (**self).zero_shot_label(req).await
    }
    async fn denoise_loss(&self, req: &DenoiseLossRequest) -> Result<f64, BackendError> {
        (**self).denoise_loss(req).await
    }
}
