use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::{write_jsonl, RewriteRecord};
use crate::error::{DataError, RewriteError};

pub const REWRITES_FILE: &str = "rewrites.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Settings handed to the external fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingHyperparameters {
    pub optimizer: String,
    pub betas: [f64; 2],
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u32,
    pub schedule: String,
    pub image_size: u32,
    pub epochs: u32,
    pub batch_size: u32,
    pub fine_tune_lr: f64,
}

impl Default for TrainingHyperparameters {
    fn default() -> Self {
        TrainingHyperparameters {
            optimizer: "adamw".into(),
            betas: [0.9, 0.98],
            lr: 0.0001,
            weight_decay: 0.1,
            warmup_steps: 2000,
            schedule: "cosine".into(),
            image_size: 224,
            epochs: 20,
            batch_size: 256,
            fine_tune_lr: 0.00002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub rewrites_file: String,
    pub records: usize,
    pub images: usize,
    pub hyperparameters: TrainingHyperparameters,
}

/// Writes `rewrites.jsonl` and `manifest.json` into `out_dir`, returning
/// the manifest path.
pub fn emit_training_manifest(
    records: &[RewriteRecord],
    out_dir: impl AsRef<Path>,
    hyperparameters: &TrainingHyperparameters,
) -> Result<PathBuf, RewriteError> {
    if records.is_empty() {
        return Err(RewriteError::EmptyInput);
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(DataError::Io)?;
    write_jsonl(records, out_dir.join(REWRITES_FILE))?;
    let images: BTreeSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let manifest = TrainingManifest {
        rewrites_file: REWRITES_FILE.into(),
        records: records.len(),
        images: images.len(),
        hyperparameters: hyperparameters.clone(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string(&manifest).map_err(DataError::Json)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(DataError::Io)?;
    Ok(path)
}
