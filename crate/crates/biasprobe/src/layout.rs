//! On-disk layout of a run.
//!
//! ```text
//! runs/<run-id>/
//!   manifest.json                      exact bytes of the manifest used
//!   originals/<identity>/<index>.png   images selected for editing
//!   edits/originals.jsonl              one gender label per original
//!   edits/ledger.jsonl                 one record per edit
//!   edits/<identity>/<profession>/<strength>/<index>.png
//!   classify/images.jsonl              images covered by the audit
//!   classify/ledger.jsonl              one record per (image, pair, sample)
//!   report/                            table1.csv, table2.csv, table3.csv,
//!                                      summary.json, report.html
//! ```

use std::path::{Path, PathBuf};

use biasprobe_core::seeds::sha256_hex;
use biasprobe_core::RunManifest;

use crate::error::AuditError;

/// Directory of one run. Creating it pins the manifest bytes; reopening it
/// with different bytes is refused.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
    run_id: String,
}

/// Timestamp plus the first 12 hex digits of the manifest hash.
pub fn new_run_id(manifest_bytes: &[u8]) -> String {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    format!("{stamp}-{}", &sha256_hex(manifest_bytes)[..12])
}

/// Path-safe form of a profession name.
pub fn path_component(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn strength_dir(strength: f64) -> String {
    format!("{strength:.2}")
}

impl RunDir {
    pub fn create(runs_dir: &Path, run_id: &str, manifest_bytes: &[u8]) -> Result<Self, AuditError> {
        let root = runs_dir.join(run_id);
        std::fs::create_dir_all(&root).map_err(AuditError::io(&root))?;
        let run = RunDir { root, run_id: run_id.to_string() };
        let path = run.manifest_path();
        match std::fs::read(&path) {
            Ok(existing) if existing != manifest_bytes => return Err(AuditError::ManifestMismatch { path }),
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                std::fs::write(&path, manifest_bytes).map_err(AuditError::io(&path))?
            }
            Err(e) => return Err(AuditError::Io { path, source: e }),
        }
        Ok(run)
    }

    pub fn open(runs_dir: &Path, run_id: &str) -> Result<Self, AuditError> {
        let root = runs_dir.join(run_id);
        let run = RunDir { root, run_id: run_id.to_string() };
        let path = run.manifest_path();
        if !path.is_file() {
            return Err(AuditError::Io { path, source: std::io::ErrorKind::NotFound.into() });
        }
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// The pinned manifest and the SHA-256 of its bytes.
    pub fn manifest(&self) -> Result<(RunManifest, String), AuditError> {
        let path = self.manifest_path();
        let bytes = std::fs::read(&path).map_err(AuditError::io(&path))?;
        Ok((RunManifest::from_json(&bytes)?, sha256_hex(&bytes)))
    }

    pub fn original_png(&self, identity_id: &str, index: usize) -> PathBuf {
        self.root.join("originals").join(path_component(identity_id)).join(format!("{index}.png"))
    }

    pub fn originals_ledger(&self) -> PathBuf {
        self.root.join("edits").join("originals.jsonl")
    }

    pub fn edit_ledger(&self) -> PathBuf {
        self.root.join("edits").join("ledger.jsonl")
    }

    pub fn edit_png(&self, identity_id: &str, profession: &str, strength: f64, index: usize) -> PathBuf {
        self.root
            .join("edits")
            .join(path_component(identity_id))
            .join(path_component(profession))
            .join(strength_dir(strength))
            .join(format!("{index}.png"))
    }

    pub fn classify_ledger(&self) -> PathBuf {
        self.root.join("classify").join("ledger.jsonl")
    }

    /// Images covered by the classification audit.
    pub fn classify_images(&self) -> PathBuf {
        self.root.join("classify").join("images.jsonl")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    /// Path relative to the run root, with forward slashes, for ledgers.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}
