//! Wire schema shared by the harness and every model backend.
//!
//! All calls are JSON over HTTP. Images travel as [`WireImage`] objects
//! (provenance plus a base64 PNG). Field order in the encoded form follows
//! the struct declarations below; optional fields are omitted when absent.
//! The full schema is documented in `docs/protocol.md`.
//!
//! [`WireImage`]: crate::image::WireImage

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageRecord;

pub const PROTOCOL_VERSION: &str = "v1";

pub const PATH_GENERATE: &str = "/v1/generate";
pub const PATH_EDIT: &str = "/v1/edit";
pub const PATH_LABEL: &str = "/v1/label";
pub const PATH_DENOISE_LOSS: &str = "/v1/denoise_loss";
pub const PATH_HEALTH: &str = "/v1/health";

/// Tolerance on the sum of zero-shot scores.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequestError {
    #[error("count must be >= 1")]
    ZeroCount,
    #[error("strength {0} is outside [0, 1]")]
    Strength(f64),
    #[error("at least two candidate labels are required, got {0}")]
    TooFewLabels(usize),
    #[error("candidate label `{0}` appears twice")]
    DuplicateLabel(String),
    #[error("response violates the protocol: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub count: u32,
    pub denoise_steps: u32,
    pub guidance: f64,
    pub seed: u64,
    /// Identity the images are generated for; copied into their provenance.
    pub identity_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl GenerateRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        if self.count == 0 {
            return Err(RequestError::ZeroCount);
        }
        Ok(())
    }

    /// `count` images, all generated, with pairwise distinct seeds.
    pub fn check_response(&self, images: &[ImageRecord]) -> Result<(), RequestError> {
        if images.len() != self.count as usize {
            return Err(RequestError::BadResponse(format!("asked for {} images, got {}", self.count, images.len())));
        }
        let mut seeds = HashSet::new();
        for img in images {
            if img.source != crate::image::ImageSource::Generated {
                return Err(RequestError::BadResponse(format!("image {} is not tagged generated", img.id)));
            }
            if !seeds.insert(img.seed) {
                return Err(RequestError::BadResponse(format!("seed {} repeated", img.seed)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub images: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub image: ImageRecord,
    pub prompt: String,
    /// Share of the diffusion schedule re-noised before denoising. 0 keeps
    /// the input, 1 discards it.
    pub strength: f64,
    pub inference_steps: u32,
    pub guidance: f64,
    pub seed: u64,
}

impl EditRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(RequestError::Strength(self.strength));
        }
        Ok(())
    }

    pub fn check_response(&self, out: &ImageRecord) -> Result<(), RequestError> {
        if !out.same_dimensions(&self.image) {
            return Err(RequestError::BadResponse("edit changed image dimensions".into()));
        }
        if out.source != crate::image::ImageSource::Edited || out.parent_id.is_none() {
            return Err(RequestError::BadResponse("edited image must carry source=edited and a parent_id".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub image: ImageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub image: ImageRecord,
    pub candidate_labels: Vec<String>,
}

impl LabelRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        if self.candidate_labels.len() < 2 {
            return Err(RequestError::TooFewLabels(self.candidate_labels.len()));
        }
        let mut seen = HashSet::new();
        for l in &self.candidate_labels {
            if !seen.insert(l) {
                return Err(RequestError::DuplicateLabel(l.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub chosen: String,
    /// One score per candidate label, in request order, summing to 1.
    pub scores: Vec<f64>,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if *s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

impl LabelResponse {
    pub fn from_scores(labels: &[String], scores: Vec<f64>) -> Self {
        let i = argmax_first(&scores).expect("non-empty scores");
        LabelResponse { chosen: labels[i].clone(), scores }
    }

    pub fn check(&self, req: &LabelRequest) -> Result<(), RequestError> {
        let bad = |m: String| Err(RequestError::BadResponse(m));
        if self.scores.len() != req.candidate_labels.len() {
            return bad(format!("{} scores for {} labels", self.scores.len(), req.candidate_labels.len()));
        }
        if self.scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("scores must be finite and non-negative".into());
        }
        let sum: f64 = self.scores.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
            return bad(format!("scores sum to {sum}"));
        }
        let expected = argmax_first(&self.scores).map(|i| &req.candidate_labels[i]);
        if expected != Some(&self.chosen) {
            return bad(format!("chosen `{}` is not the first argmax", self.chosen));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseLossRequest {
    pub image: ImageRecord,
    pub prompt: String,
    /// Seeds the Gaussian noise added to the image.
    pub noise_seed: u64,
    /// Seeds the diffusion timestep, drawn uniformly over the model's range.
    pub timestep_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseLossResponse {
    pub loss: f64,
}

impl DenoiseLossResponse {
    pub fn check(&self) -> Result<(), RequestError> {
        if !self.loss.is_finite() || self.loss < 0.0 {
            return Err(RequestError::BadResponse(format!("loss {} is not a finite non-negative value", self.loss)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_id: String,
    pub protocol_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_advice: Option<String>,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}
