//! Deterministic stand-in for a real diffusion/CLIP backend.
//!
//! Every response is a pure function of the typed request and the mock
//! seed: inputs are hashed with [`keyed_hash`] and the digest seeds a ChaCha
//! stream. A [`BiasTable`] lets fixtures program label and loss behaviour.

use std::path::Path;

use async_trait::async_trait;
use biasprobe_core::protocol::{
    DenoiseLossRequest, DenoiseLossResponse, EditRequest, GenerateRequest, LabelRequest, LabelResponse,
};
use biasprobe_core::seeds::{derive_seed, keyed_hash};
use biasprobe_core::{ImageRecord, ImageSource, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Backend, BackendError};

pub const MOCK_MODEL_ID: &str = "biasprobe-mock";
const DEFAULT_SIZE: u32 = 16;

/// Skin tones the mock paints faces with. All fall inside the default
/// YCbCr skin box.
const SKIN_PALETTE: [[u8; 3]; 9] = [
    [255, 224, 196],
    [241, 194, 167],
    [232, 190, 160],
    [224, 172, 105],
    [198, 134, 66],
    [180, 120, 90],
    [141, 85, 36],
    [120, 75, 50],
    [92, 51, 23],
];
const BACKGROUND: [u8; 3] = [70, 90, 140];

/// Forces a zero-shot label for matching images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ImageSource>,
    /// Matches when any phrase occurs as a token run in the image's prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_strength: Option<f64>,
    pub label: String,
    /// Probability that the label is forced on a matching image.
    #[serde(default = "one")]
    pub weight: f64,
}

/// Rewrites the denoising loss as `max(0, loss * scale + offset)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_id: Option<String>,
    /// Matches when any phrase occurs as a token run in the request prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_contains: Vec<String>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Programmed behaviour for the mock. Rules are tried in order and the
/// first match wins.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasTable {
    #[serde(default)]
    pub label_rules: Vec<LabelRule>,
    #[serde(default)]
    pub loss_rules: Vec<LossRule>,
}

impl BiasTable {
    pub fn load(path: &Path) -> Result<Self, String> {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// True when `phrase` occurs in `text` as a contiguous run of whole tokens,
/// so "man" does not match "woman".
pub fn prompt_matches(text: &str, phrase: &str) -> bool {
    let hay = tokens(text);
    let needle = tokens(phrase);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

fn any_phrase(text: Option<&str>, phrases: &[String]) -> bool {
    phrases.is_empty() || text.is_some_and(|t| phrases.iter().any(|p| prompt_matches(t, p)))
}

fn pixel_digest(img: &ImageRecord) -> u64 {
    keyed_hash(0, "pixels", &[&img.width().to_le_bytes(), &img.height().to_le_bytes(), img.pixels()])
}

#[derive(Debug, Clone, Default)]
pub struct MockModel {
    seed: u64,
    bias: BiasTable,
}

impl MockModel {
    pub fn new(seed: u64, bias: BiasTable) -> Self {
        MockModel { seed, bias }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng(&self, domain: &str, parts: &[&[u8]]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(keyed_hash(self.seed, domain, parts))
    }

    /// A face-like raster: a skin-toned ellipse on a flat background with
    /// per-pixel jitter.
    fn paint(&self, width: u32, height: u32, tone_key: &[&[u8]], noise_key: &[&[u8]]) -> Vec<u8> {
        let mut tone_rng = self.rng("tone", tone_key);
        let tone = SKIN_PALETTE[tone_rng.random_range(0..SKIN_PALETTE.len())];
        let mut rng = self.rng("noise", noise_key);
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let (rx, ry) = (width as f64 * 0.38, height as f64 * 0.45);
        let mut out = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let base = if dx * dx + dy * dy <= 1.0 { tone } else { BACKGROUND };
                for c in base {
                    let jitter: i16 = rng.random_range(-4..=4);
                    out.push((c as i16 + jitter).clamp(0, 255) as u8);
                }
            }
        }
        out
    }

    pub fn generate_images(&self, req: &GenerateRequest) -> Result<Vec<ImageRecord>, BackendError> {
        req.validate()?;
        let (w, h) = (req.width.unwrap_or(DEFAULT_SIZE), req.height.unwrap_or(DEFAULT_SIZE));
        (0..req.count as u64)
            .map(|i| {
                let seed = derive_seed(req.seed, i);
                let pixels = self.paint(
                    w,
                    h,
                    &[req.identity_id.as_bytes(), req.prompt.as_bytes()],
                    &[req.prompt.as_bytes(), &seed.to_le_bytes()],
                );
                let prov = Provenance {
                    id: format!("{}-{seed:016x}", req.identity_id),
                    identity_id: req.identity_id.clone(),
                    seed,
                    parent_id: None,
                    prompt: Some(req.prompt.clone()),
                    strength: None,
                };
                ImageRecord::new(w, h, pixels, ImageSource::Generated, prov)
                    .map_err(|e| BackendError::Protocol(e.to_string()))
            })
            .collect()
    }

    /// Blends the input towards a target that depends only on the prompt,
    /// seed and dimensions: `round((1 - s) * input + s * target)`.
    pub fn edit_image(&self, req: &EditRequest) -> Result<ImageRecord, BackendError> {
        req.validate()?;
        let img = &req.image;
        let seed = req.seed.to_le_bytes();
        let target = self.paint(
            img.width(),
            img.height(),
            &[req.prompt.as_bytes(), &seed],
            &[req.prompt.as_bytes(), &seed, b"edit"],
        );
        let s = req.strength;
        let pixels = img
            .pixels()
            .iter()
            .zip(&target)
            .map(|(&a, &b)| ((1.0 - s) * a as f64 + s * b as f64).round().clamp(0.0, 255.0) as u8)
            .collect();
        let prov = Provenance {
            id: format!("{}-e{:016x}", img.id, req.seed),
            identity_id: img.identity_id.clone(),
            seed: req.seed,
            parent_id: Some(img.id.clone()),
            prompt: Some(req.prompt.clone()),
            strength: Some(s),
        };
        ImageRecord::new(img.width(), img.height(), pixels, ImageSource::Edited, prov)
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }

    fn label_rule(&self, img: &ImageRecord, labels: &[String]) -> Option<&LabelRule> {
        self.bias.label_rules.iter().find(|r| {
            r.identity_id.as_ref().is_none_or(|id| *id == img.identity_id)
                && r.source.is_none_or(|s| s == img.source)
                && any_phrase(img.prompt.as_deref(), &r.prompt_contains)
                && r.min_strength.is_none_or(|m| img.strength.unwrap_or(0.0) >= m)
                && labels.contains(&r.label)
        })
    }

    pub fn label(&self, req: &LabelRequest) -> Result<LabelResponse, BackendError> {
        req.validate()?;
        let img = &req.image;
        let prompt_tokens = tokens(img.prompt.as_deref().unwrap_or_default()).join(" ");
        let labels = req.candidate_labels.join("\u{1f}");
        let mut rng = self.rng(
            "label",
            &[
                img.identity_id.as_bytes(),
                img.id.as_bytes(),
                &img.seed.to_le_bytes(),
                prompt_tokens.as_bytes(),
                labels.as_bytes(),
            ],
        );
        let k = req.candidate_labels.len();
        let forced = self.label_rule(img, &req.candidate_labels).and_then(|rule| {
            let u: f64 = rng.random();
            (u < rule.weight)
                .then(|| req.candidate_labels.iter().position(|l| *l == rule.label).expect("label checked"))
        });
        let scores = match forced {
            Some(i) => (0..k).map(|j| if j == i { 0.9 } else { 0.1 / (k - 1) as f64 }).collect(),
            None => {
                let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-9).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / total).collect()
            }
        };
        Ok(LabelResponse::from_scores(&req.candidate_labels, scores))
    }

    pub fn loss(&self, req: &DenoiseLossRequest) -> Result<f64, BackendError> {
        let img = &req.image;
        let mut rng = self.rng(
            "loss",
            &[
                &pixel_digest(img).to_le_bytes(),
                req.prompt.as_bytes(),
                &req.noise_seed.to_le_bytes(),
                &req.timestep_seed.to_le_bytes(),
            ],
        );
        let base = 0.05 + 0.1 * rng.random::<f64>();
        let rule = self.bias.loss_rules.iter().find(|r| {
            r.identity_id.as_ref().is_none_or(|id| *id == img.identity_id)
                && any_phrase(Some(&req.prompt), &r.prompt_contains)
        });
        let loss = match rule {
            Some(r) => (base * r.scale + r.offset).max(0.0),
            None => base,
        };
        DenoiseLossResponse { loss }.check()?;
        Ok(loss)
    }
}

#[async_trait]
impl Backend for MockModel {
    async fn generate(&self, req: &GenerateRequest) -> Result<Vec<ImageRecord>, BackendError> {
        let images = self.generate_images(req)?;
        req.check_response(&images)?;
        Ok(images)
    }

    async fn edit(&self, req: &EditRequest) -> Result<ImageRecord, BackendError> {
        let out = self.edit_image(req)?;
        req.check_response(&out)?;
        Ok(out)
    }

    async fn zero_shot_label(&self, req: &LabelRequest) -> Result<LabelResponse, BackendError> {
        let resp = self.label(req)?;
        resp.check(req)?;
        Ok(resp)
    }

    async fn denoise_loss(&self, req: &DenoiseLossRequest) -> Result<f64, BackendError> {
        self.loss(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use biasprobe_core::colorimetry::{rgb_to_ycbcr, SkinThresholds};

    #[test]
    fn palette_is_skin_and_background_is_not() {
        let t = SkinThresholds::default();
        for [r, g, b] in SKIN_PALETTE {
            assert!(t.is_skin(&rgb_to_ycbcr::<f64>(r, g, b)), "{r},{g},{b}");
        }
        let [r, g, b] = BACKGROUND;
        assert!(!t.is_skin(&rgb_to_ycbcr::<f64>(r, g, b)));
    }

    #[test]
    fn token_matching() {
        assert!(prompt_matches("A photo of a man", "man"));
        assert!(!prompt_matches("A photo of a woman", "man"));
        assert!(prompt_matches("a dishwasher-worker, headshot", "dishwasher worker"));
        assert!(prompt_matches("A portrait of a truck driver.", "truck driver"));
        assert!(!prompt_matches("A portrait of a driver.", "truck driver"));
        assert!(!prompt_matches("anything", ""));
    }

    #[test]
    fn bias_table_parses() {
        let t: BiasTable = serde_json::from_str(
            r#"{"label_rules": [{"identity_id": "m1", "label": "a photo of a man"}],
                "loss_rules": [{"prompt_contains": ["nurse"], "offset": 0.5}]}"#,
        )
        .unwrap();
        assert_eq!(t.label_rules[0].weight, 1.0);
        assert_eq!(t.loss_rules[0].scale, 1.0);
        assert!(serde_json::from_str::<BiasTable>(r#"{"label_rule": []}"#).is_err());
    }
}
