//! Edit audit: push each identity's images towards high- and low-paid
//! professions at several strengths, then measure gender flips and the
//! shift in skin tone of the average face.
//!
//! Edits are persisted before any metric runs. [`replay_edits`] recomputes
//! every row from the ledger and the stored PNGs alone.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use biasprobe_backend::Backend;
use biasprobe_core::colorimetry::{delta_ita, ita};
use biasprobe_core::protocol::{EditRequest, LabelRequest};
use biasprobe_core::seeds::{edit_seed, keyed_hash, subset_seed};
use biasprobe_core::{
    average_face, flip_rate, AverageFace64, EditAuditRow, Gender, ImageRecord, ImageSource, Provenance, RunManifest,
    Tier,
};
use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_png, ImageSets};
use crate::error::AuditError;
use crate::layout::RunDir;
use crate::ledger::{read_jsonl, LedgerWriter};

/// Gender label of one original image, computed once and reused for every
/// edit of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalRecord {
    pub identity_id: String,
    pub image_index: usize,
    pub image_id: String,
    pub label: String,
    pub gender: Gender,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub identity_id: String,
    pub dataset: String,
    pub image_index: usize,
    pub original_id: String,
    pub tier: Tier,
    pub profession: String,
    pub strength: f64,
    pub prompt: String,
    pub seed: u64,
    pub original_label: String,
    pub edited_id: String,
    pub edited_label: String,
    pub path: String,
}

impl EditRecord {
    fn key(&self) -> (String, usize, String, u64) {
        (self.identity_id.clone(), self.image_index, self.profession.clone(), self.strength.to_bits())
    }
}

/// Indices of the `k` images picked for editing, ascending. The order comes
/// from a keyed hash of each index, so the pick depends only on the run seed
/// and the identity.
pub fn select_subset(run_seed: u64, identity_id: &str, available: usize, k: usize) -> Result<Vec<usize>, AuditError> {
    if available < k {
        return Err(AuditError::InsufficientImages { identity_id: identity_id.into(), have: available, need: k });
    }
    let key = subset_seed(run_seed, identity_id);
    let mut idx: Vec<usize> = (0..available).collect();
    idx.sort_by_key(|&i| (keyed_hash(key, "rank", &[&(i as u64).to_le_bytes()]), i));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Zero-shot gender of one image, mapped through the manifest labels.
pub async fn classify_gender<B: Backend + ?Sized>(
    backend: &B,
    manifest: &RunManifest,
    image: &ImageRecord,
) -> Result<(String, Gender), AuditError> {
    let labels = &manifest.zero_shot_gender_labels;
    let req = LabelRequest { image: image.clone(), candidate_labels: vec![labels.male.clone(), labels.female.clone()] };
    let resp = backend.zero_shot_label(&req).await?;
    let gender = labels.gender_of(&resp.chosen).ok_or_else(|| AuditError::UnknownLabel(resp.chosen.clone()))?;
    Ok((resp.chosen, gender))
}

struct WorkItem<'a> {
    identity_id: &'a str,
    dataset: &'a str,
    index: usize,
    original: &'a ImageRecord,
    original_label: &'a str,
    tier: Tier,
    profession: &'a str,
    strength: f64,
}

/// Runs every missing edit, then replays the ledger into table rows.
///
/// Work already recorded in the ledger is skipped, so an interrupted run
/// resumes where it stopped. On a backend failure the records written so far
/// stay on disk and the error is returned.
pub async fn audit_edits<B: Backend + ?Sized>(
    manifest: &RunManifest,
    images: &ImageSets,
    backend: &B,
    run: &RunDir,
    concurrency: usize,
) -> Result<Vec<EditAuditRow>, AuditError> {
    let k = manifest.images_per_identity_edit as usize;
    let mut selected: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for ident in &manifest.identities {
        let have = images.get(&ident.id).map_or(0, Vec::len);
        selected.insert(&ident.id, select_subset(manifest.seed, &ident.id, have, k)?);
    }

    let known: Vec<OriginalRecord> = read_jsonl(&run.originals_ledger())?;
    let known: HashSet<(String, usize)> = known.into_iter().map(|r| (r.identity_id, r.image_index)).collect();
    let mut todo = Vec::new();
    for ident in &manifest.identities {
        for &i in &selected[ident.id.as_str()] {
            let img = &images[&ident.id][i];
            write_png(&run.original_png(&ident.id, i), img)?;
            if !known.contains(&(ident.id.clone(), i)) {
                todo.push((ident.id.as_str(), i, img));
            }
        }
    }
    let mut writer = LedgerWriter::open(&run.originals_ledger())?;
    let mut labelled = futures::stream::iter(todo)
        .map(|(identity_id, i, img)| async move {
            let (label, gender) = classify_gender(backend, manifest, img).await?;
            Ok::<_, AuditError>(OriginalRecord {
                identity_id: identity_id.to_string(),
                image_index: i,
                image_id: img.id.clone(),
                label,
                gender,
                path: run.relative(&run.original_png(identity_id, i)),
            })
        })
        .buffer_unordered(concurrency.max(1));
    while let Some(rec) = labelled.try_next().await? {
        writer.append(&rec)?;
    }
    drop(labelled);

    let originals: BTreeMap<(String, usize), OriginalRecord> = read_jsonl::<OriginalRecord>(&run.originals_ledger())?
        .into_iter()
        .map(|r| ((r.identity_id.clone(), r.image_index), r))
        .collect();
    let done: HashSet<_> = read_jsonl::<EditRecord>(&run.edit_ledger())?.iter().map(EditRecord::key).collect();

    let mut work = Vec::new();
    for ident in &manifest.identities {
        for tier in Tier::ALL {
            for profession in tier.professions(manifest) {
                for &strength in &manifest.edit_strengths {
                    for &index in &selected[ident.id.as_str()] {
                        if done.contains(&(ident.id.clone(), index, profession.clone(), strength.to_bits())) {
                            continue;
                        }
                        work.push(WorkItem {
                            identity_id: &ident.id,
                            dataset: &ident.dataset,
                            index,
                            original: &images[&ident.id][index],
                            original_label: &originals[&(ident.id.clone(), index)].label,
                            tier,
                            profession,
                            strength,
                        });
                    }
                }
            }
        }
    }
    log::info!("{} edits to run, {} already in the ledger", work.len(), done.len());

    let mut writer = LedgerWriter::open(&run.edit_ledger())?;
    let mut edits =
        futures::stream::iter(work).map(|w| run_edit(manifest, backend, run, w)).buffer_unordered(concurrency.max(1));
    while let Some(rec) = edits.try_next().await? {
        writer.append(&rec)?;
    }
    drop(edits);
    Ok(replay_edits(manifest, run)?.rows)
}

async fn run_edit<B: Backend + ?Sized>(
    manifest: &RunManifest,
    backend: &B,
    run: &RunDir,
    w: WorkItem<'_>,
) -> Result<EditRecord, AuditError> {
    let prompt = manifest.templates.edit.render(w.profession)?;
    let seed = edit_seed(manifest.seed, w.identity_id, w.index, w.profession, w.strength);
    let req = EditRequest {
        image: w.original.clone(),
        prompt: prompt.clone(),
        strength: w.strength,
        inference_steps: manifest.edit_params.inference_steps,
        guidance: manifest.edit_params.guidance,
        seed,
    };
    let edited = backend.edit(&req).await?;
    let (label, _) = classify_gender(backend, manifest, &edited).await?;
    let path = run.edit_png(w.identity_id, w.profession, w.strength, w.index);
    write_png(&path, &edited)?;
    Ok(EditRecord {
        identity_id: w.identity_id.to_string(),
        dataset: w.dataset.to_string(),
        image_index: w.index,
        original_id: w.original.id.clone(),
        tier: w.tier,
        profession: w.profession.to_string(),
        strength: w.strength,
        prompt,
        seed,
        original_label: w.original_label.to_string(),
        edited_id: edited.id.clone(),
        edited_label: label,
        path: run.relative(&path),
    })
}

/// Average face of one pool, as stored on disk.
#[derive(Debug, Clone)]
pub struct FacePanel {
    pub identity_id: String,
    /// `original`, or `<tier> <strength>`.
    pub caption: String,
    pub face: AverageFace64,
}

#[derive(Debug, Clone, Default)]
pub struct EditReplay {
    pub rows: Vec<EditAuditRow>,
    pub faces: Vec<FacePanel>,
}

fn load_pool(
    run: &RunDir,
    manifest: &RunManifest,
    dataset: &str,
    paths: &[(String, String)],
) -> Result<Vec<ImageRecord>, AuditError> {
    paths
        .iter()
        .map(|(id, rel)| {
            let path = run.resolve(rel);
            let bytes = std::fs::read(&path).map_err(AuditError::io(&path))?;
            let prov = Provenance { id: id.clone(), ..Default::default() };
            let img = ImageRecord::from_png(&bytes, ImageSource::Curated, prov)
                .map_err(|source| AuditError::Image { path: path.clone(), source })?;
            match manifest.crops.get(dataset) {
                Some(rect) => img.crop(*rect).map_err(|source| AuditError::Image { path, source }),
                None => Ok(img),
            }
        })
        .collect()
}

/// Recomputes the edit table from the ledgers and persisted PNGs. Returns
/// no rows when the edit audit has not been run.
pub fn replay_edits(manifest: &RunManifest, run: &RunDir) -> Result<EditReplay, AuditError> {
    let records: Vec<EditRecord> = read_jsonl(&run.edit_ledger())?;
    if records.is_empty() {
        return Ok(EditReplay::default());
    }
    let originals: BTreeMap<(String, usize), OriginalRecord> = read_jsonl::<OriginalRecord>(&run.originals_ledger())?
        .into_iter()
        .map(|r| ((r.identity_id.clone(), r.image_index), r))
        .collect();
    let mut by_key = BTreeMap::new();
    for r in records {
        by_key.entry(r.key()).or_insert(r);
    }

    let k = manifest.images_per_identity_edit as usize;
    let mut out = EditReplay::default();
    for ident in &manifest.identities {
        let orig: Vec<&OriginalRecord> = originals.values().filter(|o| o.identity_id == ident.id).collect();
        if orig.len() != k {
            return Err(AuditError::IncompleteLedger(format!("{}: {} of {k} original labels", ident.id, orig.len())));
        }
        let orig_pool = load_pool(
            run,
            manifest,
            &ident.dataset,
            &orig.iter().map(|o| (o.image_id.clone(), o.path.clone())).collect::<Vec<_>>(),
        )?;
        let orig_face: AverageFace64 = average_face(&orig_pool)?;
        let context = |what: &str| format!("{} {what}", ident.id);
        let orig_ita =
            ita(&orig_face, 0.01).map_err(|source| AuditError::Colorimetry { context: context("original"), source })?;
        out.faces.push(FacePanel { identity_id: ident.id.clone(), caption: "original".into(), face: orig_face });

        for tier in Tier::ALL {
            let professions: BTreeSet<&String> = tier.professions(manifest).iter().collect();
            for &strength in &manifest.edit_strengths {
                let cell: Vec<&EditRecord> = by_key
                    .values()
                    .filter(|r| r.identity_id == ident.id && r.tier == tier && r.strength == strength)
                    .filter(|r| professions.contains(&r.profession))
                    .collect();
                let expected = k * professions.len();
                if cell.len() != expected {
                    return Err(AuditError::IncompleteLedger(format!(
                        "{} {tier} {strength}: {} of {expected} edits",
                        ident.id,
                        cell.len()
                    )));
                }
                let gender = |label: &str| {
                    manifest
                        .zero_shot_gender_labels
                        .gender_of(label)
                        .ok_or_else(|| AuditError::UnknownLabel(label.into()))
                };
                let mut before = Vec::with_capacity(cell.len());
                let mut after = Vec::with_capacity(cell.len());
                for r in &cell {
                    let o = originals.get(&(r.identity_id.clone(), r.image_index)).ok_or_else(|| {
                        AuditError::IncompleteLedger(format!(
                            "no original label for {} #{}",
                            r.identity_id, r.image_index
                        ))
                    })?;
                    before.push(gender(&o.label)?);
                    after.push(gender(&r.edited_label)?);
                }
                let flip: f64 = flip_rate(&before, &after)?;
                let pool = load_pool(
                    run,
                    manifest,
                    &ident.dataset,
                    &cell.iter().map(|r| (r.edited_id.clone(), r.path.clone())).collect::<Vec<_>>(),
                )?;
                let face: AverageFace64 = average_face(&pool)?;
                let what = format!("{tier} {strength}");
                let edited_ita =
                    ita(&face, 0.01).map_err(|source| AuditError::Colorimetry { context: context(&what), source })?;
                out.rows.push(EditAuditRow {
                    dataset: ident.dataset.clone(),
                    identity_id: ident.id.clone(),
                    tier,
                    strength,
                    flip_rate: flip,
                    delta_ita: delta_ita(&orig_ita, &edited_ita),
                    n_edits: cell.len() as u32,
                    original_ita: orig_ita.ita_degrees,
                    edited_ita: edited_ita.ita_degrees,
                });
                out.faces.push(FacePanel { identity_id: ident.id.clone(), caption: what, face });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_is_stable_sorted_and_sized() {
        let a = select_subset(3, "f1", 100, 25).unwrap();
        assert_eq!(a, select_subset(3, "f1", 100, 25).unwrap());
        assert_eq!(a.len(), 25);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, select_subset(3, "m1", 100, 25).unwrap());
        assert_eq!(select_subset(3, "f1", 25, 25).unwrap(), (0..25).collect::<Vec<_>>());
        assert!(matches!(select_subset(3, "f1", 24, 25), Err(AuditError::InsufficientImages { have: 24, .. })));
    }
}
