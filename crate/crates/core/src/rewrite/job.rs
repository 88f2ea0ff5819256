use std::collections::HashSet;
use std::path::PathBuf;

use futures::stream::{self, StreamExt};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, info, warn};

use crate::checkpoint::{fingerprint, CheckpointStore};
use crate::datamodel::{ImageCaptionPair, KeywordSet, Record, RewriteRecord};
use crate::error::RewriteError;
use crate::gateway::{ChatBackend, ChatRequest, DEFAULT_MAX_TOKENS};

use super::keywords::{coverage, parse_keyword_reply, ParseMode};
use super::templates::PromptTemplates;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewriteJobConfig {
    /// Rewrites per input caption.
    pub r: u32,
    pub temperature: f64,
    /// Extra attempts for a rewrite below `min_coverage`.
    pub max_coverage_retries: u32,
    pub min_coverage: f64,
    /// Drives input sampling and the per-request sampling seeds.
    pub seed: u64,
    /// Temperature for the keyword extraction call.
    pub extraction_temperature: f64,
    pub workers: usize,
    pub max_tokens: u32,
    /// Progress log; an existing log from the same job is resumed.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RewriteJobConfig {
    fn default() -> Self {
        RewriteJobConfig {
            r: 5,
            temperature: 1.0,
            max_coverage_retries: 2,
            min_coverage: 0.9,
            seed: 0,
            extraction_temperature: 0.0,
            workers: 8,
            max_tokens: DEFAULT_MAX_TOKENS,
            checkpoint: None,
        }
    }
}

impl RewriteJobConfig {
    pub fn validate(&self) -> Result<(), RewriteError> {
        let bad = |m: &str| Err(RewriteError::Config(m.to_string()));
        if self.r == 0 {
            return bad("r must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return bad("min_coverage must lie in [0, 1]");
        }
        if !(0.0..=2.0).contains(&self.temperature) || !(0.0..=2.0).contains(&self.extraction_temperature) {
            return bad("temperatures must lie in [0, 2]");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// Everything that changes the job's output, workers excluded.
    fn fingerprint_text(&self) -> String {
        format!(
            "r={} t={} retries={} min={} seed={} t1={} max_tokens={}",
            self.r,
            self.temperature,
            self.max_coverage_retries,
            self.min_coverage,
            self.seed,
            self.extraction_temperature,
            self.max_tokens
        )
    }
}

/// Asks for keywords; one re-ask if nothing parseable comes back.
pub async fn extract_keywords<B: ChatBackend>(
    backend: &B,
    templates: &PromptTemplates,
    caption: &str,
    temperature: f64,
    max_tokens: u32,
) -> Result<(KeywordSet, ParseMode), RewriteError> {
    if caption.trim().is_empty() {
        return Err(RewriteError::EmptyInput);
    }
    let mut req = ChatRequest::new(templates.extraction_turns(caption), temperature);
    req.max_tokens = max_tokens;
    let mut last = String::new();
    for ask in 0..2 {
        let reply = backend.complete(&req).await?;
        if let Some((set, mode)) = parse_keyword_reply(&reply.text) {
            if mode == ParseMode::Fallback {
                warn!(caption, "extraction reply had no labels; read it as a noun list");
            }
            return Ok((set, mode));
        }
        debug!(ask, reply = %reply.text, "no keywords recognized");
        last = reply.text;
    }
    Err(RewriteError::EmptyExtraction(last))
}

/// Strips code fences, emphasis markers, a leading `Caption:` label and
/// surrounding quotes.
pub fn clean_rewrite(reply: &str) -> String {
    let mut s = reply.trim();
    if let Some(inner) = s.strip_prefix("```") {
        // drop an optional language tag on the fence line
        let inner = match inner.split_once('\n') {
            Some((tag, rest)) if !tag.contains(' ') => rest,
            _ => inner,
        };
        s = inner.strip_suffix("```").unwrap_or(inner).trim();
    }
    loop {
        let before = s;
        for (open, close) in [
            ("**", "**"),
            ("__", "__"),
            ("\"", "\""),
            ("'", "'"),
            ("“", "”"),
            ("`", "`"),
        ] {
            if s.len() >= open.len() + close.len() {
                if let Some(inner) = s.strip_prefix(open).and_then(|x| x.strip_suffix(close)) {
                    s = inner.trim();
                }
            }
        }
        if let Some((label, rest)) = s.split_once(':') {
            if matches!(
                label.trim().to_lowercase().as_str(),
                "caption" | "rewritten caption" | "sentence"
            ) {
                s = rest.trim();
            }
        }
        if s == before {
            break;
        }
    }
    s.to_string()
}

/// One rewrite for `keywords`, cleaned up.
pub async fn generate_rewrite<B: ChatBackend>(
    backend: &B,
    templates: &PromptTemplates,
    keywords: &KeywordSet,
    temperature: f64,
    max_tokens: u32,
    seed: Option<u64>,
) -> Result<String, RewriteError> {
    if keywords.is_empty() {
        return Err(RewriteError::NoKeywords);
    }
    let mut req = ChatRequest::new(templates.rewrite_turns(&keywords.ordered()), temperature);
    req.max_tokens = max_tokens;
    req.seed = seed;
    let reply = backend.complete(&req).await?;
    let text = clean_rewrite(&reply.text);
    if text.is_empty() {
        return Err(RewriteError::BlankRewrite);
    }
    Ok(text)
}

/// Stable per-request seed so reruns send identical requests.
fn request_seed(job_seed: u64, image_id: &str, index: u32, attempt: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(job_seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update(index.to_le_bytes());
    h.update(attempt.to_le_bytes());
    let d = h.finalize();
    // keep within 2^53 so JSON consumers that parse numbers as doubles agree
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) >> 11
}

/// Completed work for one input pair, as stored in the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub keywords: KeywordSet,
    pub records: Vec<RewriteRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItemFailure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewriteOutcome {
    /// Ordered by input position, then rewrite index.
    pub records: Vec<RewriteRecord>,
    /// Keywords for each successful item, in input order.
    pub keywords: Vec<(String, KeywordSet)>,
    pub failures: Vec<ItemFailure>,
    /// Items taken from the checkpoint instead of the endpoint.
    pub resumed: usize,
    /// Share of records whose text repeats an earlier rewrite of the same
    /// caption.
    pub duplicate_rate: f64,
}

async fn rewrite_one<B: ChatBackend>(
    backend: &B,
    templates: &PromptTemplates,
    cfg: &RewriteJobConfig,
    image_id: &str,
    keywords: &KeywordSet,
    index: u32,
) -> Result<RewriteRecord, RewriteError> {
    let mut best: Option<(String, f64)> = None;
    let mut attempts = 0;
    let mut last_err = None;
    for attempt in 0..=cfg.max_coverage_retries {
        attempts = attempt + 1;
        let seed = request_seed(cfg.seed, image_id, index, attempt);
        let text = match generate_rewrite(
            backend,
            templates,
            keywords,
            cfg.temperature,
            cfg.max_tokens,
            Some(seed),
        )
        .await
        {
            Ok(t) => t,
            Err(RewriteError::BlankRewrite) => {
                last_err = Some(RewriteError::BlankRewrite);
                continue;
            }
            Err(e) => return Err(e),
        };
        let cov = coverage(&text, keywords);
        let fraction = cov.fraction::<f64>();
        if !cov.missing.is_empty() {
            debug!(image_id, index, attempt, missing = ?cov.missing, "rewrite missed keywords");
        }
        if best.as_ref().is_none_or(|(_, b)| fraction > *b) {
            best = Some((text, fraction));
        }
        if fraction >= cfg.min_coverage {
            break;
        }
    }
    let (text, coverage) = best.ok_or_else(|| last_err.unwrap_or(RewriteError::BlankRewrite))?;
    Ok(RewriteRecord {
        image_id: image_id.to_string(),
        rewrite_index: index,
        text,
        coverage,
        attempts,
    })
}

async fn rewrite_item<B: ChatBackend>(
    backend: &B,
    templates: &PromptTemplates,
    cfg: &RewriteJobConfig,
    pair: &ImageCaptionPair,
) -> Result<ItemResult, RewriteError> {
    let (keywords, _) = extract_keywords(
        backend,
        templates,
        &pair.caption,
        cfg.extraction_temperature,
        cfg.max_tokens,
    )
    .await?;
    let rewrites = (1..=cfg.r).map(|i| rewrite_one(backend, templates, cfg, &pair.image_id, &keywords, i));
    let records = futures::future::try_join_all(rewrites).await?;
    Ok(ItemResult { keywords, records })
}

fn job_fingerprint(
    pairs: &[ImageCaptionPair],
    cfg: &RewriteJobConfig,
    templates: &PromptTemplates,
) -> String {
    let mut input = Sha256::new();
    for p in pairs {
        input.update(p.image_id.as_bytes());
        input.update([0x1f]);
        input.update(p.caption.as_bytes());
        input.update([0x1e]);
    }
    let input = hex::encode(input.finalize());
    fingerprint(&[
        "rewrite",
        &cfg.fingerprint_text(),
        &templates.digest_input(),
        &input,
    ])
}

fn duplicate_rate(records: &[RewriteRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let dups = records
        .iter()
        .filter(|r| !seen.insert((r.image_id.as_str(), r.text.as_str())))
        .count();
    dups as f64 / records.len() as f64
}

/// Runs both stages over every pair.
///
/// Items run `cfg.workers` at a time and the R rewrites of an item run
/// together. Output order follows the input regardless of completion
/// order. A failed item is logged and skipped; the job fails only when more
/// than 10% of items fail.
pub async fn rewrite_dataset<B: ChatBackend>(
    backend: &B,
    pairs: &[ImageCaptionPair],
    cfg: &RewriteJobConfig,
    templates: &PromptTemplates,
) -> Result<RewriteOutcome, RewriteError> {
    cfg.validate()?;
    templates.validate()?;
    if pairs.is_empty() {
        return Err(RewriteError::EmptyInput);
    }
    crate::datamodel::validate_all(pairs)?;

    let (store, mut done) = match &cfg.checkpoint {
        Some(path) => {
            let (store, done) =
                CheckpointStore::open::<ItemResult>(path, &job_fingerprint(pairs, cfg, templates))?;
            (Some(store), done)
        }
        None => (None, Default::default()),
    };
    let resumed = pairs.iter().filter(|p| done.contains_key(&p.image_id)).count();
    if resumed > 0 {
        info!(resumed, total = pairs.len(), "resuming rewrite job");
    }

    let store = store.as_ref();
    let tasks = pairs.iter().map(|pair| {
        let cached = done.remove(&pair.image_id);
        async move {
            if let Some(item) = cached {
                return Ok(item);
            }
            let item = rewrite_item(backend, templates, cfg, pair).await?;
            if let Some(store) = store {
                store.append(&pair.image_id, &item)?;
            }
            Ok::<_, RewriteError>(item)
        }
    });
    let results: Vec<_> = stream::iter(tasks).buffered(cfg.workers).collect().await;

    let mut outcome = RewriteOutcome {
        records: Vec::with_capacity(pairs.len() * cfg.r as usize),
        keywords: Vec::new(),
        failures: Vec::new(),
        resumed,
        duplicate_rate: 0.0,
    };
    for (pair, result) in pairs.iter().zip(results) {
        match result {
            Ok(item) => {
                outcome.keywords.push((pair.image_id.clone(), item.keywords));
                outcome.records.extend(item.records);
            }
            Err(e @ RewriteError::Checkpoint(_)) => return Err(e),
            Err(e) => {
                warn!(image_id = %pair.image_id, error = %e, "rewrite item failed");
                outcome.failures.push(ItemFailure {
                    image_id: pair.image_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if outcome.failures.len() * 10 > pairs.len() {
        return Err(RewriteError::TooManyFailures {
            failed: outcome.failures.len(),
            total: pairs.len(),
        });
    }
    for r in &mut outcome.records {
        r.normalize();
    }
    outcome.duplicate_rate = duplicate_rate(&outcome.records);
    Ok(outcome)
}

/// Uniform sample of `n` pairs without replacement, in dataset order.
pub fn sample_pairs(
    dataset: &[ImageCaptionPair],
    n: usize,
    seed: u64,
) -> Result<Vec<ImageCaptionPair>, RewriteError> {
    if n > dataset.len() {
        return Err(RewriteError::SampleTooLarge {
            requested: n,
            available: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, dataset.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| dataset[i].clone()).collect())
}
