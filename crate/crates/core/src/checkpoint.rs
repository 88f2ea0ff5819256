//! Append-only progress log for resumable jobs.
//!
//! The file is JSONL: a header line carrying a job fingerprint, then one
//! `{"key":..,"value":..}` line per finished item. Each line goes out in a
//! single write, so a killed job leaves at worst one torn final line, which
//! is dropped on reopen.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::error::CheckpointError;

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
}

#[derive(Serialize)]
struct EntryOut<'a, T> {
    key: &'a str,
    value: &'a T,
}

#[derive(Deserialize)]
struct EntryIn<T> {
    key: String,
    value: T,
}

/// Hash of everything that determines a job's output.
pub fn fingerprint(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(&h.finalize()[..12])
}

#[derive(Debug)]
pub struct CheckpointStore {
    path: PathBuf,
    file: Mutex<File>,
}

impl CheckpointStore {
    /// Opens or creates the log and returns the entries already in it.
    pub fn open<T: DeserializeOwned>(
        path: impl AsRef<Path>,
        job_fingerprint: &str,
    ) -> Result<(Self, HashMap<String, T>), CheckpointError> {
        let path = path.as_ref().to_path_buf();
        let mut done = HashMap::new();
        if path.exists() {
            let mut raw = Vec::new();
            File::open(&path)?.read_to_end(&mut raw)?;
            let mut offset = 0usize;
            let mut good_len = 0usize;
            let mut header_seen = false;
            for (i, line) in raw.split(|b| *b == b'\n').enumerate() {
                let end = offset + line.len();
                // only newline-terminated lines are trusted
                let complete = end < raw.len();
                offset = end + 1;
                if !complete {
                    if !line.is_empty() {
                        warn!(path = %path.display(), "dropping torn checkpoint line");
                    }
                    break;
                }
                if line.iter().all(u8::is_ascii_whitespace) {
                    good_len = offset;
                    continue;
                }
                if !header_seen {
                    let header: Header = serde_json::from_slice(line)
                        .map_err(|source| CheckpointError::Corrupt { line: i + 1, source })?;
                    if header.fingerprint != job_fingerprint {
                        return Err(CheckpointError::Mismatch {
                            path,
                            found: header.fingerprint,
                            expected: job_fingerprint.to_string(),
                        });
                    }
                    header_seen = true;
                } else {
                    let entry: EntryIn<T> = serde_json::from_slice(line)
                        .map_err(|source| CheckpointError::Corrupt { line: i + 1, source })?;
                    done.insert(entry.key, entry.value);
                }
                good_len = offset;
            }
            if header_seen {
                let file = OpenOptions::new().write(true).open(&path)?;
                file.set_len(good_len as u64)?;
                drop(file);
                let file = OpenOptions::new().append(true).open(&path)?;
                return Ok((
                    Self {
                        path,
                        file: Mutex::new(file),
                    },
                    done,
                ));
            }
        }
        let file = Self::create(&path, job_fingerprint)?;
        Ok((
            Self {
                path,
                file: Mutex::new(file),
            },
            done,
        ))
    }

    fn create(path: &Path, job_fingerprint: &str) -> Result<File, CheckpointError> {
        let mut file = File::create(path)?;
        let mut line = serde_json::to_string(&Header {
            fingerprint: job_fingerprint.to_string(),
        })?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(file)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records one finished item.
    pub fn append<T: Serialize>(&self, key: &str, value: &T) -> Result<(), CheckpointError> {
        let mut line = serde_json::to_string(&EntryOut { key, value })?;
        line.push('\n');
        let mut file = self.file.lock().expect("checkpoint lock poisoned");
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }
}
