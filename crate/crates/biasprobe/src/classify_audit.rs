//! Diffusion-classifier association audit.
//!
//! For every image and every Monte-Carlo sample the harness fixes a
//! (noise, timestep) seed pair and asks the backend for the denoising loss
//! under each candidate prompt, so all prompts are compared on the same
//! draws. Seeds depend on the sample index but not on the sample count,
//! which makes the `n` draws of a small sweep a prefix of a larger one.
//!
//! Decisions, scores and accuracies are a replay over the loss ledger.

use std::collections::{BTreeMap, HashMap, HashSet};

use biasprobe_backend::Backend;
use biasprobe_core::metrics::{association_score_with, pair_fractions, Indicator};
use biasprobe_core::protocol::DenoiseLossRequest;
use biasprobe_core::seeds::sample_seeds;
use biasprobe_core::{
    gender_accuracy, significant_comparisons, AccuracyRow, AssociationRow, AssociationTable, Choice, Decision64,
    Gender, ImageRecord, PairFraction64, RunManifest,
};
use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSets;
use crate::error::AuditError;
use crate::layout::RunDir;
use crate::ledger::{read_jsonl, LedgerWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// A target-concept pair from `set_a x set_b`.
    Concept,
    /// The male/female concept pair used for the accuracy check.
    Gender,
}

/// Paired losses for one (image, pair, sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub identity_id: String,
    pub dataset: String,
    pub image_id: String,
    pub kind: PairKind,
    pub concept_a: String,
    pub concept_b: String,
    pub sample: u32,
    pub noise_seed: u64,
    pub timestep_seed: u64,
    pub loss_a: f64,
    pub loss_b: f64,
}

/// Image membership of the classification run, used to check completeness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub identity_id: String,
    pub image_id: String,
}

type PairKey = (PairKind, String, String);
/// Paired losses per sample slot; `None` until the ledger has that sample.
type SampleLosses = Vec<Option<(f64, f64)>>;

fn pairs(manifest: &RunManifest) -> Vec<(PairKind, String, String)> {
    let mut out: Vec<_> = manifest.concepts.pairs().into_iter().map(|(a, b)| (PairKind::Concept, a, b)).collect();
    let g = &manifest.classifier_gender_concepts;
    out.push((PairKind::Gender, g.male.clone(), g.female.clone()));
    out
}

/// Losses for one image on one seed pair, for every pair in the manifest.
async fn sample_unit<B: Backend + ?Sized>(
    manifest: &RunManifest,
    backend: &B,
    identity_id: &str,
    dataset: &str,
    image: &ImageRecord,
    sample: u32,
) -> Result<Vec<LossRecord>, AuditError> {
    let (noise_seed, timestep_seed) = sample_seeds(manifest.seed, &image.id, sample);
    let pairs = pairs(manifest);
    let mut concepts: Vec<String> = Vec::new();
    for (_, a, b) in &pairs {
        for c in [a, b] {
            if !concepts.contains(c) {
                concepts.push(c.clone());
            }
        }
    }
    let calls = concepts.iter().map(|c| async move {
        let req = DenoiseLossRequest {
            image: image.clone(),
            prompt: manifest.templates.classify.render(c)?,
            noise_seed,
            timestep_seed,
        };
        Ok::<_, AuditError>((c.as_str(), backend.denoise_loss(&req).await?))
    });
    let losses: HashMap<&str, f64> = futures::future::try_join_all(calls).await?.into_iter().collect();
    Ok(pairs
        .into_iter()
        .map(|(kind, a, b)| LossRecord {
            identity_id: identity_id.to_string(),
            dataset: dataset.to_string(),
            image_id: image.id.clone(),
            kind,
            loss_a: losses[a.as_str()],
            loss_b: losses[b.as_str()],
            concept_a: a,
            concept_b: b,
            sample,
            noise_seed,
            timestep_seed,
        })
        .collect())
}

/// Collects every missing loss for every image of every identity, then
/// replays the ledger.
pub async fn audit_classify<B: Backend + ?Sized>(
    manifest: &RunManifest,
    images: &ImageSets,
    backend: &B,
    run: &RunDir,
    concurrency: usize,
) -> Result<ClassifyReplay, AuditError> {
    let max_n = manifest.max_elbo_samples();
    let n_pairs = pairs(manifest).len();

    let entries_path = run.classify_images();
    let _ = std::fs::remove_file(&entries_path);
    let mut entries = LedgerWriter::open(&entries_path)?;
    for ident in &manifest.identities {
        let list = images.get(&ident.id).map(Vec::as_slice).unwrap_or_default();
        if list.is_empty() {
            return Err(AuditError::InsufficientImages { identity_id: ident.id.clone(), have: 0, need: 1 });
        }
        let recs: Vec<ImageEntry> =
            list.iter().map(|i| ImageEntry { identity_id: ident.id.clone(), image_id: i.id.clone() }).collect();
        entries.append_all(&recs)?;
    }

    let mut per_unit: HashMap<(String, u32), usize> = HashMap::new();
    for r in read_jsonl::<LossRecord>(&run.classify_ledger())? {
        *per_unit.entry((r.image_id, r.sample)).or_default() += 1;
    }
    let done: HashSet<(String, u32)> = per_unit.into_iter().filter(|(_, n)| *n >= n_pairs).map(|(k, _)| k).collect();

    let mut work = Vec::new();
    for ident in &manifest.identities {
        for img in &images[&ident.id] {
            for s in 0..max_n {
                if !done.contains(&(img.id.clone(), s)) {
                    work.push((ident, img, s));
                }
            }
        }
    }
    log::info!("{} classification units to run, {} already in the ledger", work.len(), done.len());

    let mut writer = LedgerWriter::open(&run.classify_ledger())?;
    let mut units = futures::stream::iter(work)
        .map(|(ident, img, s)| sample_unit(manifest, backend, &ident.id, &ident.dataset, img, s))
        .buffer_unordered(concurrency.max(1));
    while let Some(recs) = units.try_next().await? {
        writer.append_all(&recs)?;
    }
    drop(units);
    replay_classify(manifest, run)
}

/// Per-image, per-pair losses indexed by sample.
struct LossIndex {
    /// identity -> image ids in ledger-listed order
    images: BTreeMap<String, Vec<String>>,
    losses: HashMap<(String, PairKey), SampleLosses>,
}

fn index_ledger(manifest: &RunManifest, run: &RunDir) -> Result<Option<LossIndex>, AuditError> {
    let records: Vec<LossRecord> = read_jsonl(&run.classify_ledger())?;
    if records.is_empty() {
        return Ok(None);
    }
    let entries: Vec<ImageEntry> = read_jsonl(&run.classify_images())?;
    let mut images: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in entries {
        images.entry(e.identity_id).or_default().push(e.image_id);
    }
    let max_n = manifest.max_elbo_samples() as usize;
    let mut losses: HashMap<(String, PairKey), SampleLosses> = HashMap::new();
    for r in records {
        if r.sample as usize >= max_n {
            continue;
        }
        let slot = losses.entry((r.image_id, (r.kind, r.concept_a, r.concept_b))).or_insert_with(|| vec![None; max_n]);
        slot[r.sample as usize].get_or_insert((r.loss_a, r.loss_b));
    }
    Ok(Some(LossIndex { images, losses }))
}

impl LossIndex {
    fn decision(&self, image_id: &str, key: &PairKey, n: u32) -> Result<Decision64, AuditError> {
        let missing =
            || AuditError::IncompleteLedger(format!("{image_id} {}/{}: fewer than {n} samples", key.1, key.2));
        let slot = self.losses.get(&(image_id.to_string(), key.clone())).ok_or_else(missing)?;
        let mut la = Vec::with_capacity(n as usize);
        let mut lb = Vec::with_capacity(n as usize);
        for s in slot.iter().take(n as usize) {
            let (a, b) = s.ok_or_else(missing)?;
            la.push(a);
            lb.push(b);
        }
        if la.len() != n as usize {
            return Err(missing());
        }
        Ok(Decision64::from_losses(image_id, &key.1, &key.2, &la, &lb)?)
    }

    fn decisions(
        &self,
        manifest: &RunManifest,
        identity_id: &str,
        kind: PairKind,
        n: u32,
    ) -> Result<Vec<Decision64>, AuditError> {
        let ids = self
            .images
            .get(identity_id)
            .ok_or_else(|| AuditError::IncompleteLedger(format!("no images recorded for {identity_id}")))?;
        let keys: Vec<PairKey> = pairs(manifest).into_iter().filter(|p| p.0 == kind).collect();
        let mut out = Vec::with_capacity(ids.len() * keys.len());
        for id in ids {
            for key in &keys {
                out.push(self.decision(id, key, n)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClassifyReplay {
    pub table2: AssociationTable,
    pub table3: Vec<AccuracyRow>,
    /// Per-pair rates of choosing `a` at the largest sample count.
    pub pair_fractions: Vec<PairFraction64>,
    pub significant: Vec<PairFraction64>,
}

/// Association rows under an arbitrary indicator; the headline tables use
/// [`Indicator::Hard`].
pub fn association_rows(
    manifest: &RunManifest,
    run: &RunDir,
    indicator: Indicator,
) -> Result<Vec<AssociationRow>, AuditError> {
    let Some(index) = index_ledger(manifest, run)? else { return Ok(Vec::new()) };
    association_rows_from(manifest, &index, indicator)
}

fn association_rows_from(
    manifest: &RunManifest,
    index: &LossIndex,
    indicator: Indicator,
) -> Result<Vec<AssociationRow>, AuditError> {
    let mut rows = Vec::new();
    for ident in &manifest.identities {
        for &n in &manifest.elbo_sample_counts {
            let decisions = index.decisions(manifest, &ident.id, PairKind::Concept, n)?;
            let score =
                association_score_with(&decisions, &manifest.concepts.set_a, &manifest.concepts.set_b, indicator)?;
            rows.push(AssociationRow {
                dataset: ident.dataset.clone(),
                identity_id: ident.id.clone(),
                n_samples: n,
                score,
            });
        }
    }
    Ok(rows)
}

/// Recomputes tables 2 and 3 and the pair fractions from the ledger.
/// Returns empty tables when the classification audit has not been run.
pub fn replay_classify(manifest: &RunManifest, run: &RunDir) -> Result<ClassifyReplay, AuditError> {
    let Some(index) = index_ledger(manifest, run)? else { return Ok(ClassifyReplay::default()) };
    let rows = association_rows_from(manifest, &index, Indicator::Hard)?;
    let mut table3 = Vec::new();
    let mut fractions = Vec::new();
    let max_n = manifest.max_elbo_samples();
    for ident in &manifest.identities {
        let expected = match ident.group_axes.gender_label {
            Gender::Male => Choice::A,
            Gender::Female => Choice::B,
        };
        for &n in &manifest.elbo_sample_counts {
            let decisions = index.decisions(manifest, &ident.id, PairKind::Gender, n)?;
            let truth: BTreeMap<String, Choice> = decisions.iter().map(|d| (d.image_id.clone(), expected)).collect();
            table3.push(AccuracyRow {
                dataset: ident.dataset.clone(),
                identity_id: ident.id.clone(),
                n_samples: n,
                accuracy: gender_accuracy(&decisions, &truth)?,
            });
        }
        let decisions = index.decisions(manifest, &ident.id, PairKind::Concept, max_n)?;
        fractions.extend(pair_fractions(&ident.id, &decisions));
    }
    Ok(ClassifyReplay {
        table2: AssociationTable::from_rows(rows, manifest),
        table3,
        significant: significant_comparisons(&fractions),
        pair_fractions: fractions,
    })
}
