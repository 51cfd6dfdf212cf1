//! Image sets on disk and their generation through a backend.
//!
//! A dataset directory holds `<identity_id>/*.png`. When `index.jsonl` is
//! present (as written by [`generate_dataset`]) it lists every image with
//! its provenance; otherwise the PNGs are treated as curated images, loaded
//! in file-name order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use biasprobe_backend::Backend;
use biasprobe_core::protocol::GenerateRequest;
use biasprobe_core::seeds::keyed_hash;
use biasprobe_core::{ImageRecord, ImageSource, Provenance, RunManifest};
use serde::{Deserialize, Serialize};

use crate::error::AuditError;
use crate::layout::path_component;
use crate::ledger::{read_jsonl, LedgerWriter};

pub const INDEX_FILE: &str = "index.jsonl";

/// Images per generate call.
const GENERATE_BATCH: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub identity_id: String,
    /// Relative to the dataset directory.
    pub file: String,
    pub source: ImageSource,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

pub type ImageSets = BTreeMap<String, Vec<ImageRecord>>;

fn read_png(path: &Path, source: ImageSource, prov: Provenance) -> Result<ImageRecord, AuditError> {
    let bytes = std::fs::read(path).map_err(AuditError::io(path))?;
    ImageRecord::from_png(&bytes, source, prov).map_err(|source| AuditError::Image { path: path.into(), source })
}

pub fn write_png(path: &Path, img: &ImageRecord) -> Result<(), AuditError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(AuditError::io(parent))?;
    }
    let png = img.to_png().map_err(|source| AuditError::Image { path: path.into(), source })?;
    std::fs::write(path, png).map_err(AuditError::io(path))
}

/// Loads the images of every manifest identity. Identities without images
/// map to an empty list.
pub fn load_images(dir: &Path, manifest: &RunManifest) -> Result<ImageSets, AuditError> {
    let mut sets: ImageSets = manifest.identities.iter().map(|i| (i.id.clone(), Vec::new())).collect();
    let index = dir.join(INDEX_FILE);
    if index.is_file() {
        for e in read_jsonl::<IndexEntry>(&index)? {
            let Some(list) = sets.get_mut(&e.identity_id) else { continue };
            let prov = Provenance {
                id: e.id,
                identity_id: e.identity_id,
                seed: e.seed,
                prompt: e.prompt,
                ..Default::default()
            };
            list.push(read_png(&dir.join(&e.file), e.source, prov)?);
        }
        return Ok(sets);
    }
    for (identity_id, list) in sets.iter_mut() {
        let sub = dir.join(path_component(identity_id));
        if !sub.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&sub)
            .map_err(AuditError::io(&sub))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for path in files {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            let prov = Provenance {
                id: format!("{identity_id}/{stem}"),
                identity_id: identity_id.clone(),
                ..Default::default()
            };
            list.push(read_png(&path, ImageSource::Curated, prov)?);
        }
    }
    Ok(sets)
}

/// Generates `count` images per identity (default from the manifest) into
/// `out`, spreading them round-robin over the identity's attribute terms.
pub async fn generate_dataset<B: Backend>(
    manifest: &RunManifest,
    backend: &B,
    out: &Path,
    count: Option<u32>,
    size: Option<(u32, u32)>,
) -> Result<ImageSets, AuditError> {
    let count = count.unwrap_or(manifest.images_per_identity_generation);
    let index_path = out.join(INDEX_FILE);
    if index_path.exists() {
        std::fs::remove_file(&index_path).map_err(AuditError::io(&index_path))?;
    }
    let mut index = LedgerWriter::open(&index_path)?;
    let mut sets = ImageSets::new();
    for ident in &manifest.identities {
        let terms = &ident.attribute_terms;
        let mut images = Vec::with_capacity(count as usize);
        for (t, term) in terms.iter().enumerate() {
            let n_term = (count as usize + terms.len() - 1 - t) / terms.len();
            let prompt = manifest.templates.generation.render(term)?;
            let mut done = 0u32;
            let mut batch = 0u64;
            while (done as usize) < n_term {
                let n = GENERATE_BATCH.min(n_term as u32 - done);
                let seed = keyed_hash(
                    manifest.seed,
                    "generate",
                    &[ident.id.as_bytes(), term.as_bytes(), &batch.to_le_bytes()],
                );
                let req = GenerateRequest {
                    prompt: prompt.clone(),
                    count: n,
                    denoise_steps: manifest.generation_params.denoise_steps,
                    guidance: manifest.generation_params.guidance,
                    seed,
                    identity_id: ident.id.clone(),
                    width: size.map(|s| s.0),
                    height: size.map(|s| s.1),
                };
                images.extend(backend.generate(&req).await?);
                done += n;
                batch += 1;
            }
        }
        for (i, img) in images.iter().enumerate() {
            let file = format!("{}/{i:04}.png", path_component(&ident.id));
            write_png(&out.join(&file), img)?;
            index.append(&IndexEntry {
                id: img.id.clone(),
                identity_id: ident.id.clone(),
                file,
                source: img.source,
                seed: img.seed,
                prompt: img.prompt.clone(),
            })?;
        }
        log::info!("generated {} images for {}", images.len(), ident.id);
        sets.insert(ident.id.clone(), images);
    }
    Ok(sets)
}
