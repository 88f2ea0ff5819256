//! Two-stage caption rewriting: pull keywords out of a caption, then ask
//! for new captions that must contain them.

mod job;
mod keywords;
mod manifest;
mod templates;

pub use job::{
    clean_rewrite, extract_keywords, generate_rewrite, rewrite_dataset, sample_pairs, ItemFailure,
    ItemResult, RewriteJobConfig, RewriteOutcome,
};
pub use keywords::{coverage, parse_keyword_reply, words, Coverage, ParseMode};
pub use manifest::{
    emit_training_manifest, TrainingHyperparameters, TrainingManifest, MANIFEST_FILE, REWRITES_FILE,
};
pub use templates::{
    ExtractionDemo, PromptTemplates, RewriteDemo, CAPTION_PLACEHOLDER, KEYWORDS_PLACEHOLDER,
};
