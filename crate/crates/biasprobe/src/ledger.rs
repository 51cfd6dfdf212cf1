//! Append-only JSON-lines ledgers.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::AuditError;

/// Reads every complete record. A missing file is an empty ledger; a final
/// line without a newline is an interrupted write and is ignored.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, AuditError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(AuditError::Io { path: path.into(), source: e }),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(AuditError::io(path))?;
        if read == 0 || !line.ends_with('\n') {
            break;
        }
        n += 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|source| AuditError::Json { path: path.into(), line: n, source })?;
        out.push(rec);
    }
    Ok(out)
}

/// Single writer for one ledger. Each record is one line, flushed before
/// `append` returns.
#[derive(Debug)]
pub struct LedgerWriter {
    file: File,
    path: PathBuf,
}

impl LedgerWriter {
    /// Opens for appending, first trimming any torn final line.
    pub fn open(path: &Path) -> Result<Self, AuditError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(AuditError::io(parent))?;
        }
        if let Ok(bytes) = std::fs::read(path) {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if keep != bytes.len() {
                let f = OpenOptions::new().write(true).open(path).map_err(AuditError::io(path))?;
                f.set_len(keep as u64).map_err(AuditError::io(path))?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(AuditError::io(path))?;
        Ok(LedgerWriter { file, path: path.to_path_buf() })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), AuditError> {
        self.append_all(std::slice::from_ref(record))
    }

    /// Writes several records with a single write call.
    pub fn append_all<T: Serialize>(&mut self, records: &[T]) -> Result<(), AuditError> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("ledger record serializes");
            buf.push(b'\n');
        }
        self.file.write_all(&buf).map_err(AuditError::io(&self.path))?;
        self.file.flush().map_err(AuditError::io(&self.path))
    }
}
