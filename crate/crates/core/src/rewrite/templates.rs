use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::RewriteError;
use crate::gateway::Turn;

pub const CAPTION_PLACEHOLDER: &str = "{caption}";
pub const KEYWORDS_PLACEHOLDER: &str = "{keywords}";

/// Worked example shown before the real extraction request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionDemo {
    pub caption: String,
    /// Labeled keyword reply the model should imitate.
    pub output: String,
}

/// Worked example shown before the real rewrite request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteDemo {
    pub keywords: Vec<String>,
    pub caption: String,
}

/// Both prompt templates and their demonstrations. The same demonstrations
/// are used for every input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub stage1_template: String,
    pub stage1_demo: ExtractionDemo,
    pub stage2_template: String,
    pub stage2_demo: RewriteDemo,
}

fn check_placeholder(name: &str, template: &str, placeholder: &str) -> Result<(), RewriteError> {
    match template.matches(placeholder).count() {
        1 => Ok(()),
        n => Err(RewriteError::Template(format!(
            "{name} must contain {placeholder} exactly once, found {n}"
        ))),
    }
}

fn read(dir: &Path, name: &str) -> Result<String, RewriteError> {
    std::fs::read_to_string(dir.join(name))
        .map_err(|e| RewriteError::Template(format!("{}: {e}", dir.join(name).display())))
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let parse = |s: &str| s.trim_end().to_string();
        PromptTemplates {
            stage1_template: parse(include_str!("../../../../data/templates/stage1.txt")),
            stage1_demo: serde_json::from_str(include_str!("../../../../data/templates/stage1_demo.json"))
                .expect("bundled stage-1 demo is valid"),
            stage2_template: parse(include_str!("../../../../data/templates/stage2.txt")),
            stage2_demo: serde_json::from_str(include_str!("../../../../data/templates/stage2_demo.json"))
                .expect("bundled stage-2 demo is valid"),
        }
    }
}

impl PromptTemplates {
    pub fn new(
        stage1_template: String,
        stage1_demo: ExtractionDemo,
        stage2_template: String,
        stage2_demo: RewriteDemo,
    ) -> Result<Self, RewriteError> {
        let t = PromptTemplates {
            stage1_template,
            stage1_demo,
            stage2_template,
            stage2_demo,
        };
        t.validate()?;
        Ok(t)
    }

    /// Loads `stage1.txt`, `stage1_demo.json`, `stage2.txt` and
    /// `stage2_demo.json` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RewriteError> {
        let dir = dir.as_ref();
        let demo1: ExtractionDemo = serde_json::from_str(&read(dir, "stage1_demo.json")?)
            .map_err(|e| RewriteError::Template(format!("stage1_demo.json: {e}")))?;
        let demo2: RewriteDemo = serde_json::from_str(&read(dir, "stage2_demo.json")?)
            .map_err(|e| RewriteError::Template(format!("stage2_demo.json: {e}")))?;
        Self::new(
            read(dir, "stage1.txt")?.trim_end().to_string(),
            demo1,
            read(dir, "stage2.txt")?.trim_end().to_string(),
            demo2,
        )
    }

    pub fn validate(&self) -> Result<(), RewriteError> {
        check_placeholder("stage-1 template", &self.stage1_template, CAPTION_PLACEHOLDER)?;
        check_placeholder("stage-2 template", &self.stage2_template, KEYWORDS_PLACEHOLDER)?;
        if self.stage1_demo.caption.trim().is_empty() || self.stage1_demo.output.trim().is_empty() {
            return Err(RewriteError::Template("stage-1 demo is incomplete".into()));
        }
        if self.stage2_demo.keywords.is_empty() || self.stage2_demo.caption.trim().is_empty() {
            return Err(RewriteError::Template("stage-2 demo is incomplete".into()));
        }
        Ok(())
    }

    pub fn render_extraction(&self, caption: &str) -> String {
        self.stage1_template.replacen(CAPTION_PLACEHOLDER, caption, 1)
    }

    pub fn render_rewrite(&self, keywords: &[String]) -> String {
        self.stage2_template
            .replacen(KEYWORDS_PLACEHOLDER, &keywords.join(", "), 1)
    }

    /// Demo exchange followed by the real extraction request.
    pub fn extraction_turns(&self, caption: &str) -> Vec<Turn> {
        vec![
            Turn::user(self.render_extraction(&self.stage1_demo.caption)),
            Turn::assistant(self.stage1_demo.output.clone()),
            Turn::user(self.render_extraction(caption)),
        ]
    }

    pub fn rewrite_turns(&self, keywords: &[String]) -> Vec<Turn> {
        vec![
            Turn::user(self.render_rewrite(&self.stage2_demo.keywords)),
            Turn::assistant(self.stage2_demo.caption.clone()),
            Turn::user(self.render_rewrite(keywords)),
        ]
    }

    /// Stable text form, used in job fingerprints.
    pub fn digest_input(&self) -> String {
        format!(
            "{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}",
            self.stage1_template,
            self.stage1_demo.caption,
            self.stage1_demo.output,
            self.stage2_template,
            self.stage2_demo.keywords.join("\u{1e}"),
            self.stage2_demo.caption
        )
    }
}
