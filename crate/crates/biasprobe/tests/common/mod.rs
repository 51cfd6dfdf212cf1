#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use biasprobe::dataset::ImageSets;
use biasprobe_backend::{Backend, BackendError, BiasTable, LabelRule, LossRule, MockModel};
use biasprobe_core::protocol::{DenoiseLossRequest, EditRequest, GenerateRequest, LabelRequest, LabelResponse};
use biasprobe_core::{ImageRecord, ImageSource, RunManifest};

pub fn identity(id: &str, gender: &str, race: &str, term: &str) -> serde_json::Value {
    serde_json::json!({
        "id": id,
        "display_name": id,
        "attribute_terms": [term],
        "group_axes": {"gender_label": gender, "race_label": race}
    })
}

pub fn manifest(identities: Vec<serde_json::Value>, extra: serde_json::Value) -> RunManifest {
    let mut m = serde_json::json!({
        "identities": identities,
        "concepts": {
            "set_a": ["carpenter", "plumber", "truck driver", "mechanic", "construction worker"],
            "set_b": ["babysitter", "secretary", "housekeeper", "nurse", "receptionist"],
            "label_a": "male-dominated",
            "label_b": "female-dominated"
        }
    });
    for (k, v) in extra.as_object().unwrap() {
        m[k] = v.clone();
    }
    RunManifest::from_json(&serde_json::to_vec(&m).unwrap()).unwrap()
}

pub fn two_identities() -> Vec<serde_json::Value> {
    vec![identity("f1", "female", "black", "African-American woman"), identity("m1", "male", "white", "Caucasian man")]
}

pub fn generate_sets(model: &MockModel, manifest: &RunManifest, count: u32) -> ImageSets {
    manifest
        .identities
        .iter()
        .map(|ident| {
            let req = GenerateRequest {
                prompt: manifest.templates.generation.render(&ident.attribute_terms[0]).unwrap(),
                count,
                denoise_steps: 100,
                guidance: 8.5,
                seed: 1000 + ident.id.len() as u64 + ident.id.bytes().map(u64::from).sum::<u64>(),
                identity_id: ident.id.clone(),
                width: None,
                height: None,
            };
            (ident.id.clone(), model.generate_images(&req).unwrap())
        })
        .collect()
}

pub fn label_rule(
    identity: Option<&str>,
    source: Option<ImageSource>,
    prompts: &[&str],
    min_strength: Option<f64>,
    label: &str,
) -> LabelRule {
    LabelRule {
        identity_id: identity.map(String::from),
        source,
        prompt_contains: prompts.iter().map(|s| s.to_string()).collect(),
        min_strength,
        label: label.into(),
        weight: 1.0,
    }
}

pub const MAN: &str = "a photo of a man";
pub const WOMAN: &str = "a photo of a woman";

/// Every image keeps its identity's gender label.
pub fn label_preserving() -> BiasTable {
    BiasTable {
        label_rules: vec![label_rule(Some("f1"), None, &[], None, WOMAN), label_rule(Some("m1"), None, &[], None, MAN)],
        loss_rules: vec![],
    }
}

/// Female-identity edits towards high-paid professions at strength 1.0
/// come back male; everything else keeps its label.
pub fn programmed_flip() -> BiasTable {
    let mut t = label_preserving();
    t.label_rules.insert(0, label_rule(Some("f1"), Some(ImageSource::Edited), &["doctor", "CEO"], Some(1.0), MAN));
    t
}

/// Lowers the loss of the identity's own gender prompt.
pub fn gender_aware_losses() -> Vec<LossRule> {
    vec![
        LossRule { identity_id: Some("m1".into()), prompt_contains: vec!["man".into()], offset: -0.2, scale: 1.0 },
        LossRule { identity_id: Some("f1".into()), prompt_contains: vec!["woman".into()], offset: -0.2, scale: 1.0 },
    ]
}

/// Delegates to an inner backend and fails every call after `budget`.
pub struct Flaky {
    pub inner: MockModel,
    pub budget: usize,
    pub calls: Arc<AtomicUsize>,
}

impl Flaky {
    fn tick(&self) -> Result<(), BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            Err(BackendError::Unavailable { attempts: 4, last: "injected".into() })
        } else {
            Ok(())
        }
    }
}

#[async_trait]
impl Backend for Flaky {
    async fn generate(&self, req: &GenerateRequest) -> Result<Vec<ImageRecord>, BackendError> {
        self.tick()?;
        self.inner.generate(req).await
    }
    async fn edit(&self, req: &EditRequest) -> Result<ImageRecord, BackendError> {
        self.tick()?;
        self.inner.edit(req).await
    }
    async fn zero_shot_label(&self, req: &LabelRequest) -> Result<LabelResponse, BackendError> {
        self.tick()?;
        self.inner.zero_shot_label(req).await
    }
    async fn denoise_loss(&self, req: &DenoiseLossRequest) -> Result<f64, BackendError> {
        self.tick()?;
        self.inner.denoise_loss(req).await
    }
}
