//! Parsing extraction replies and checking keyword coverage.

use std::collections::HashSet;

use crate::datamodel::KeywordSet;
use crate::scalar::Scalar;

/// How an extraction reply was understood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// `Nouns: ...` / `Verbs: ...` / `Adjectives: ...` lines.
    Labeled,
    /// No labels found; the whole reply was read as a noun list.
    Fallback,
}

#[derive(Clone, Copy)]
enum Group {
    Nouns,
    Verbs,
    Adjectives,
}

fn group_of(label: &str) -> Option<Group> {
    let label = label.trim_matches(|c: char| !c.is_alphabetic()).to_lowercase();
    match label.as_str() {
        "noun" | "nouns" => Some(Group::Nouns),
        "verb" | "verbs" => Some(Group::Verbs),
        "adjective" | "adjectives" => Some(Group::Adjectives),
        _ => None,
    }
}

fn split_tokens(list: &str) -> Vec<String> {
    list.split([',', ';', '\n'])
        .map(|t| {
            t.trim()
                .trim_matches(|c: char| {
                    matches!(
                        c,
                        '"' | '\'' | '`' | '[' | ']' | '(' | ')' | '.' | '*' | '_' | '“' | '”'
                    )
                })
                .trim()
                .to_lowercase()
        })
        .filter(|t| !t.is_empty() && !matches!(t.as_str(), "none" | "n/a" | "-"))
        .collect()
}

/// Parses an extraction reply into keywords.
///
/// Returns `None` when nothing usable was found.
pub fn parse_keyword_reply(reply: &str) -> Option<(KeywordSet, ParseMode)> {
    let mut nouns = Vec::new();
    let mut verbs = Vec::new();
    let mut adjectives = Vec::new();
    let mut labeled = false;
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '•', '#', ' ']);
        let Some((label, rest)) = line.split_once(':') else {
            continue;
        };
        let Some(group) = group_of(label) else {
            continue;
        };
        labeled = true;
        let tokens = split_tokens(rest);
        match group {
            Group::Nouns => nouns.extend(tokens),
            Group::Verbs => verbs.extend(tokens),
            Group::Adjectives => adjectives.extend(tokens),
        }
    }
    let (set, mode) = if labeled {
        (
            KeywordSet::normalized(nouns, verbs, adjectives),
            ParseMode::Labeled,
        )
    } else {
        (
            KeywordSet::normalized(split_tokens(reply), Vec::new(), Vec::new()),
            ParseMode::Fallback,
        )
    };
    if set.is_empty() {
        None
    } else {
        Some((set, mode))
    }
}

const SUFFIXES: [&str; 5] = ["s", "es", "ed", "ing", "d"];
const MIN_STEM_CHARS: usize = 3;

/// A word plus every form reachable by removing one inflectional suffix.
fn forms(word: &str) -> Vec<&str> {
    let mut out = vec![word];
    for suffix in SUFFIXES {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.chars().count() >= MIN_STEM_CHARS {
                out.push(stem);
            }
        }
    }
    out
}

fn words_match(a: &str, b: &str) -> bool {
    let fb = forms(b);
    forms(a).iter().any(|x| fb.contains(x))
}

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_keyword(caption: &[String], keyword: &[String]) -> bool {
    if keyword.is_empty() || keyword.len() > caption.len() {
        return false;
    }
    caption
        .windows(keyword.len())
        .any(|w| w.iter().zip(keyword).all(|(c, k)| words_match(c, k)))
}

/// Which keywords a caption contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coverage {
    pub matched: usize,
    pub total: usize,
    pub missing: Vec<String>,
}

impl Coverage {
    /// `matched / total`; an empty keyword set counts as fully covered.
    pub fn fraction<S: Scalar>(&self) -> S {
        if self.total == 0 {
            S::one()
        } else {
            S::from_ratio(self.matched as u64, self.total as u64)
        }
    }

    /// True when there were no keywords to check.
    pub fn vacuous(&self) -> bool {
        self.total == 0
    }
}

/// Checks which keywords appear in `caption` as whole words, ignoring case
/// and allowing one inflectional suffix (s, es, ed, ing, d) to differ.
pub fn coverage(caption: &str, keywords: &KeywordSet) -> Coverage {
    let caption_words = words(caption);
    let list = keywords.ordered();
    let mut seen = HashSet::new();
    let mut matched = 0;
    let mut missing = Vec::new();
    for k in list.iter().filter(|k| seen.insert(k.as_str())) {
        if contains_keyword(&caption_words, &words(k)) {
            matched += 1;
        } else {
            missing.push(k.clone());
        }
    }
    Coverage {
        matched,
        total: matched + missing.len(),
        missing,
    }
}
