//! Shared record types and their JSONL encoding.
//!
//! Every dataset the toolkit reads or writes is JSONL: one JSON object per
//! line, keys emitted in struct field order. Text fields are NFC-normalized
//! on read so keyword matching sees a single form of each accented letter.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::DataError;

/// Yes/no ground truth or parsed answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "yes",
            Label::No => "no",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Object,
    MultiObject,
    Attribute,
    Behavior,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Object,
        Category::MultiObject,
        Category::Attribute,
        Category::Behavior,
    ];

    /// The three fine-grained categories, in report column order.
    pub const FINE_GRAINED: [Category; 3] = [Category::MultiObject, Category::Attribute, Category::Behavior];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Object => "object",
            Category::MultiObject => "multi_object",
            Category::Attribute => "attribute",
            Category::Behavior => "behavior",
        }
    }

    /// Column heading used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            Category::Object => "Object",
            Category::MultiObject => "Multi-Object",
            Category::Attribute => "Attribute",
            Category::Behavior => "Behavior",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Pope,
    Fghe,
    Custom,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Pope => "pope",
            Source::Fghe => "fghe",
            Source::Custom => "custom",
        }
    }
}

/// Outcome of parsing a free-text answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parsed {
    Yes,
    No,
    Unparseable,
}

impl Parsed {
    pub fn label(self) -> Option<Label> {
        match self {
            Parsed::Yes => Some(Label::Yes),
            Parsed::No => Some(Label::No),
            Parsed::Unparseable => None,
        }
    }
}

impl From<Label> for Parsed {
    fn from(label: Label) -> Self {
        match label {
            Label::Yes => Parsed::Yes,
            Label::No => Parsed::No,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCaptionPair {
    pub image_id: String,
    pub image_path: String,
    pub caption: String,
}

/// Keywords pulled out of a caption by the extraction stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub adjectives: Vec<String>,
}

impl KeywordSet {
    /// Lowercases every keyword and drops in-list duplicates, keeping the
    /// first occurrence.
    pub fn normalized(nouns: Vec<String>, verbs: Vec<String>, adjectives: Vec<String>) -> Self {
        fn clean(list: Vec<String>) -> Vec<String> {
            let mut seen = HashSet::new();
            list.into_iter()
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .filter(|k| seen.insert(k.clone()))
                .collect()
        }
        KeywordSet {
            nouns: clean(nouns),
            verbs: clean(verbs),
            adjectives: clean(adjectives),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty() && self.verbs.is_empty() && self.adjectives.is_empty()
    }

    /// Flattened keyword list: nouns, then verbs, then adjectives, each
    /// group alphabetized, with cross-group repeats removed.
    pub fn ordered(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for group in [&self.nouns, &self.verbs, &self.adjectives] {
            let mut sorted: Vec<&String> = group.iter().collect();
            sorted.sort();
            for k in sorted {
                if seen.insert(k.as_str()) {
                    out.push(k.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub image_id: String,
    pub rewrite_index: u32,
    pub text: String,
    pub coverage: f64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeQuestion {
    pub question_id: String,
    pub image_id: String,
    pub text: String,
    pub label: Label,
    pub category: Category,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeVerdict {
    pub question_id: String,
    pub raw_response: String,
    pub parsed: Parsed,
    pub correct: bool,
    pub latency_ms: u64,
}

/// Ground-truth object list for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageObjects {
    pub image_id: String,
    pub objects: Vec<String>,
}

/// Raw exchange kept beside the verdicts for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub question_id: String,
    pub prompt: String,
    pub raw_response: String,
    pub parsed: Parsed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A field-level invariant failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub reason: String,
}

impl Violation {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Violation {
            field,
            reason: reason.into(),
        }
    }
}

/// A JSONL record kind with its own invariants.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Identifier used in error messages.
    fn id(&self) -> String;

    /// Key that must be unique within one file, if any.
    fn unique_key(&self) -> Option<String> {
        Some(self.id())
    }

    fn validate(&self) -> Result<(), Violation>;

    /// Applies NFC normalization to every text field.
    fn normalize(&mut self);
}

fn nfc(s: &mut String) {
    if !unicode_normalization::is_nfc(s) {
        *s = s.nfc().collect();
    }
}

fn non_blank(field: &'static str, value: &str) -> Result<(), Violation> {
    if value.trim().is_empty() {
        Err(Violation::new(field, "must not be empty"))
    } else {
        Ok(())
    }
}

fn duplicate_free(field: &'static str, list: &[String]) -> Result<(), Violation> {
    let mut seen = HashSet::new();
    for item in list {
        if !seen.insert(item.to_lowercase()) {
            return Err(Violation::new(field, format!("duplicate entry `{item}`")));
        }
    }
    Ok(())
}

impl Record for ImageCaptionPair {
    const KIND: &'static str = "image-caption pair";

    fn id(&self) -> String {
        self.image_id.clone()
    }

    fn validate(&self) -> Result<(), Violation> {
        non_blank("image_id", &self.image_id)?;
        non_blank("caption", &self.caption)
    }

    fn normalize(&mut self) {
        nfc(&mut self.image_id);
        nfc(&mut self.image_path);
        nfc(&mut self.caption);
    }
}

impl Record for KeywordSet {
    const KIND: &'static str = "keyword set";

    fn id(&self) -> String {
        self.ordered().join(",")
    }

    fn unique_key(&self) -> Option<String> {
        None
    }

    fn validate(&self) -> Result<(), Violation> {
        duplicate_free("nouns", &self.nouns)?;
        duplicate_free("verbs", &self.verbs)?;
        duplicate_free("adjectives", &self.adjectives)?;
        if self.is_empty() {
            return Err(Violation::new("nouns", "keyword set is empty"));
        }
        // commas separate keywords in the rewrite prompt
        for (field, list) in [
            ("nouns", &self.nouns),
            ("verbs", &self.verbs),
            ("adjectives", &self.adjectives),
        ] {
            if let Some(k) = list
                .iter()
                .find(|k| k.contains(',') || k.trim() != k.as_str() || k.is_empty())
            {
                return Err(Violation::new(
                    field,
                    format!("keyword `{k}` is blank, padded, or contains a comma"),
                ));
            }
        }
        Ok(())
    }

    fn normalize(&mut self) {
        for list in [&mut self.nouns, &mut self.verbs, &mut self.adjectives] {
            list.iter_mut().for_each(nfc);
        }
    }
}

impl Record for RewriteRecord {
    const KIND: &'static str = "rewrite record";

    fn id(&self) -> String {
        format!("{}#{}", self.image_id, self.rewrite_index)
    }

    fn validate(&self) -> Result<(), Violation> {
        non_blank("image_id", &self.image_id)?;
        if self.rewrite_index == 0 {
            return Err(Violation::new("rewrite_index", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(Violation::new("coverage", "must lie in [0, 1]"));
        }
        if self.attempts == 0 {
            return Err(Violation::new("attempts", "must be at least 1"));
        }
        Ok(())
    }

    fn normalize(&mut self) {
        nfc(&mut self.image_id);
        nfc(&mut self.text);
    }
}

impl Record for ProbeQuestion {
    const KIND: &'static str = "probe question";

    fn id(&self) -> String {
        self.question_id.clone()
    }

    fn validate(&self) -> Result<(), Violation> {
        non_blank("question_id", &self.question_id)?;
        non_blank("image_id", &self.image_id)?;
        if !self.text.trim_end().ends_with('?') {
            return Err(Violation::new("text", "question must end with `?`"));
        }
        if self.source == Source::Pope && self.category != Category::Object {
            return Err(Violation::new(
                "category",
                "pope questions must have category `object`",
            ));
        }
        Ok(())
    }

    fn normalize(&mut self) {
        nfc(&mut self.question_id);
        nfc(&mut self.image_id);
        nfc(&mut self.text);
    }
}

impl Record for ProbeVerdict {
    const KIND: &'static str = "probe verdict";

    fn id(&self) -> String {
        self.question_id.clone()
    }

    fn validate(&self) -> Result<(), Violation> {
        non_blank("question_id", &self.question_id)?;
        if self.correct && self.parsed == Parsed::Unparseable {
            return Err(Violation::new(
                "correct",
                "an unparseable answer cannot be correct",
            ));
        }
        Ok(())
    }

    fn normalize(&mut self) {
        nfc(&mut self.question_id);
        nfc(&mut self.raw_response);
    }
}

impl Record for ImageObjects {
    const KIND: &'static str = "image objects";

    fn id(&self) -> String {
        self.image_id.clone()
    }

    fn validate(&self) -> Result<(), Violation> {
        non_blank("image_id", &self.image_id)?;
        if self.objects.is_empty() {
            return Err(Violation::new("objects", "must not be empty"));
        }
        if let Some(o) = self.objects.iter().find(|o| o.trim().is_empty()) {
            return Err(Violation::new("objects", format!("blank object name `{o}`")));
        }
        duplicate_free("objects", &self.objects)
    }

    fn normalize(&mut self) {
        nfc(&mut self.image_id);
        for o in &mut self.objects {
            nfc(o);
            *o = o.to_lowercase();
        }
    }
}

impl Record for Transcript {
    const KIND: &'static str = "transcript";

    fn id(&self) -> String {
        self.question_id.clone()
    }

    fn validate(&self) -> Result<(), Violation> {
        non_blank("question_id", &self.question_id)
    }

    fn normalize(&mut self) {
        nfc(&mut self.question_id);
        nfc(&mut self.prompt);
        nfc(&mut self.raw_response);
    }
}

/// Checks a record list as a whole: per-record invariants plus key
/// uniqueness. Line numbers in errors are 1-based positions in `records`.
pub fn validate_all<T: Record>(records: &[T]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for (i, record) in records.iter().enumerate() {
        let line = i + 1;
        record.validate().map_err(|v| DataError::Invalid {
            kind: T::KIND,
            line,
            id: record.id(),
            field: v.field,
            reason: v.reason,
        })?;
        if let Some(key) = record.unique_key() {
            if !seen.insert(key.clone()) {
                return Err(DataError::Duplicate {
                    kind: T::KIND,
                    line,
                    id: key,
                });
            }
        }
    }
    Ok(())
}

/// Parses JSONL text into records, normalizing and validating each one.
pub fn parse_jsonl<T: Record>(reader: impl BufRead) -> Result<Vec<T>, DataError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: T = serde_json::from_str(&line).map_err(|source| DataError::Parse {
            kind: T::KIND,
            line: line_no,
            source,
        })?;
        record.normalize();
        record.validate().map_err(|v| DataError::Invalid {
            kind: T::KIND,
            line: line_no,
            id: record.id(),
            field: v.field,
            reason: v.reason,
        })?;
        if let Some(key) = record.unique_key() {
            if !seen.insert(key.clone()) {
                return Err(DataError::Duplicate {
                    kind: T::KIND,
                    line: line_no,
                    id: key,
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_jsonl<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::Open {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_jsonl(BufReader::new(file))
}

/// Serializes records as JSONL text. Records are validated first.
pub fn to_jsonl_string<T: Record>(records: &[T]) -> Result<String, DataError> {
    validate_all(records)?;
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes records as JSONL. Nothing touches the filesystem unless every
/// record is valid.
pub fn write_jsonl<T: Record>(records: &[T], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let body = to_jsonl_string(records)?;
    let file = File::create(path).map_err(|e| DataError::Open {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(body.as_bytes())?;
    w.flush()?;
    Ok(())
}
