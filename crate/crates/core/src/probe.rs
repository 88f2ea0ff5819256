//! Asks a model each bank question and turns its free-text reply into a
//! yes/no verdict.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::checkpoint::{fingerprint, CheckpointStore};
use crate::datamodel::{Parsed, ProbeQuestion, ProbeVerdict, Transcript};
use crate::error::ProbeError;
use crate::gateway::{ChatBackend, ChatRequest, Turn};

pub const ANSWER_INSTRUCTION: &str = "Answer yes or no.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerPolicy {
    /// Only a leading yes/no counts.
    Strict,
    /// Falls back to negation-aware cues in the first sentence.
    #[default]
    Lenient,
}

impl FromStr for AnswerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(AnswerPolicy::Strict),
            "lenient" => Ok(AnswerPolicy::Lenient),
            other => Err(format!("unknown answer policy `{other}` (strict, lenient)")),
        }
    }
}

impl fmt::Display for AnswerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerPolicy::Strict => "strict",
            AnswerPolicy::Lenient => "lenient",
        })
    }
}

fn leading_word(raw: &str) -> Option<String> {
    raw.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphabetic()))
        .find(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn first_sentence(raw: &str) -> &str {
    let raw = raw.trim_start();
    match raw.find(['.', '!', '?', '\n']) {
        Some(i) => &raw[..i],
        None => raw,
    }
}

/// Lowercased words of the first sentence with `there's` and `it's`
/// expanded.
fn sentence_words(raw: &str) -> Vec<String> {
    let sentence = first_sentence(raw).replace('’', "'").to_lowercase();
    let mut out = Vec::new();
    for w in sentence
        .split(|c: char| !(c.is_alphabetic() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
    {
        match w {
            "there's" => out.extend(["there".to_string(), "is".to_string()]),
            "it's" => out.extend(["it".to_string(), "is".to_string()]),
            _ => out.push(w.to_string()),
        }
    }
    out
}

fn negative_cue(words: &[String]) -> bool {
    words
        .iter()
        .any(|w| w == "no" || w == "not" || w == "cannot" || w.ends_with("n't"))
}

fn positive_cue(words: &[String]) -> bool {
    let w: Vec<&str> = words.iter().map(String::as_str).collect();
    let negated = |next: Option<&&str>| matches!(next, Some(&"not") | Some(&"no"));
    w.contains(&"yes")
        || w.windows(3)
            .any(|x| x[0] == "there" && x[1] == "is" && (x[2] == "a" || x[2] == "an"))
        || w.iter()
            .enumerate()
            .any(|(i, x)| *x == "it" && w.get(i + 1) == Some(&"is") && !negated(w.get(i + 2)))
}

/// Reads a reply as yes, no, or neither.
///
/// Both policies first look at the leading word. The lenient policy then
/// scans the first sentence: `no`, `not` and `n't` forms signal no;
/// `yes`, `there is a(n)` and a non-negated `it is` signal yes. Signals on
/// both sides, or none, leave the answer unparseable.
pub fn parse_answer(raw: &str, policy: AnswerPolicy) -> Parsed {
    match leading_word(raw).as_deref() {
        Some("yes") => return Parsed::Yes,
        Some("no") => return Parsed::No,
        _ => {}
    }
    if policy == AnswerPolicy::Strict {
        return Parsed::Unparseable;
    }
    let words = sentence_words(raw);
    match (positive_cue(&words), negative_cue(&words)) {
        (true, false) => Parsed::Yes,
        (false, true) => Parsed::No,
        _ => Parsed::Unparseable,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeRunConfig {
    pub workers: usize,
    /// Text placed before each question.
    pub prompt_preamble: Option<String>,
    pub answer_policy: AnswerPolicy,
    pub resume_path: Option<PathBuf>,
    /// When set, `{image_id}` is substituted and the result is sent as an
    /// image part with each question. Otherwise requests are text-only.
    pub image_url_template: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Record wall-clock latency per question; turn off for reproducible
    /// output files.
    pub measure_latency: bool,
}

impl Default for ProbeRunConfig {
    fn default() -> Self {
        ProbeRunConfig {
            workers: 8,
            prompt_preamble: None,
            answer_policy: AnswerPolicy::Lenient,
            resume_path: None,
            image_url_template: None,
            temperature: 0.0,
            max_tokens: 64,
            measure_latency: true,
        }
    }
}

impl ProbeRunConfig {
    /// The user message for `question`.
    pub fn message(&self, question: &ProbeQuestion) -> String {
        let q = format!("{} {ANSWER_INSTRUCTION}", question.text.trim());
        match &self.prompt_preamble {
            Some(p) if !p.trim().is_empty() => format!("{}\n{q}", p.trim()),
            _ => q,
        }
    }

    fn request(&self, question: &ProbeQuestion) -> ChatRequest {
        let mut turn = Turn::user(self.message(question));
        turn.image_url = self
            .image_url_template
            .as_ref()
            .map(|t| t.replace("{image_id}", &question.image_id));
        let mut req = ChatRequest::new(vec![turn], self.temperature);
        req.max_tokens = self.max_tokens;
        req
    }

    fn fingerprint_text(&self) -> String {
        format!(
            "preamble={:?} policy={} image={:?} t={} max_tokens={} latency={}",
            self.prompt_preamble,
            self.answer_policy,
            self.image_url_template,
            self.temperature,
            self.max_tokens,
            self.measure_latency
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Answered {
    verdict: ProbeVerdict,
    transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProbeOutcome {
    /// One per question, in question order.
    pub verdicts: Vec<ProbeVerdict>,
    pub transcripts: Vec<Transcript>,
    /// Questions whose request failed after retries.
    pub transport_failures: usize,
    /// Questions answered from the checkpoint.
    pub resumed: usize,
}

async fn ask<B: ChatBackend>(
    backend: &B,
    cfg: &ProbeRunConfig,
    question: &ProbeQuestion,
) -> (Answered, bool) {
    let req = cfg.request(question);
    let started = Instant::now();
    let result = backend.complete(&req).await;
    let latency_ms = if cfg.measure_latency {
        started.elapsed().as_millis() as u64
    } else {
        0
    };
    let (raw, error) = match result {
        Ok(c) => (c.text, None),
        Err(e) => {
            warn!(question_id = %question.question_id, error = %e, "probe request failed");
            (String::new(), Some(e.to_string()))
        }
    };
    let parsed = if error.is_some() {
        Parsed::Unparseable
    } else {
        parse_answer(&raw, cfg.answer_policy)
    };
    let failed = error.is_some();
    let answered = Answered {
        verdict: ProbeVerdict {
            question_id: question.question_id.clone(),
            raw_response: raw.clone(),
            parsed,
            correct: parsed.label() == Some(question.label),
            latency_ms,
        },
        transcript: Transcript {
            question_id: question.question_id.clone(),
            prompt: req.prompt().to_string(),
            raw_response: raw,
            parsed,
            error,
        },
    };
    (answered, failed)
}

fn job_fingerprint(questions: &[ProbeQuestion], cfg: &ProbeRunConfig) -> String {
    let mut h = Sha256::new();
    for q in questions {
        for part in [&q.question_id, &q.image_id, &q.text, q.label.as_str()] {
            h.update(part.as_bytes());
            h.update([0x1f]);
        }
    }
    fingerprint(&["probe", &cfg.fingerprint_text(), &hex::encode(h.finalize())])
}

/// Asks every question, `cfg.workers` at a time, keeping question order.
///
/// A request that fails after the gateway's retries yields an unparseable
/// verdict with the error kept in its transcript; the run fails only when
/// more than 10% of questions fail this way. Failed questions are not
/// checkpointed, so a resumed run asks them again.
pub async fn run_probe<B: ChatBackend>(
    backend: &B,
    questions: &[ProbeQuestion],
    cfg: &ProbeRunConfig,
) -> Result<ProbeOutcome, ProbeError> {
    if questions.is_empty() {
        return Err(ProbeError::EmptyBank);
    }
    if cfg.workers == 0 {
        return Err(ProbeError::NoWorkers);
    }
    let (store, mut done) = match &cfg.resume_path {
        Some(path) => {
            let (s, d) = CheckpointStore::open::<Answered>(path, &job_fingerprint(questions, cfg))?;
            (Some(s), d)
        }
        None => (None, Default::default()),
    };
    let resumed = questions
        .iter()
        .filter(|q| done.contains_key(&q.question_id))
        .count();
    if resumed > 0 {
        info!(resumed, total = questions.len(), "resuming probe run");
    }
    let store = store.as_ref();
    let tasks = questions.iter().map(|q| {
        let cached = done.remove(&q.question_id);
        async move {
            if let Some(a) = cached {
                return Ok((a, false));
            }
            let (a, failed) = ask(backend, cfg, q).await;
            if let (Some(store), false) = (store, failed) {
                store.append(&q.question_id, &a)?;
            }
            Ok::<_, ProbeError>((a, failed))
        }
    });
    let results: Vec<_> = stream::iter(tasks).buffered(cfg.workers).collect().await;

    let mut outcome = ProbeOutcome {
        verdicts: Vec::with_capacity(questions.len()),
        transcripts: Vec::with_capacity(questions.len()),
        transport_failures: 0,
        resumed,
    };
    for r in results {
        let (a, failed) = r?;
        outcome.transport_failures += failed as usize;
        outcome.verdicts.push(a.verdict);
        outcome.transcripts.push(a.transcript);
    }
    if outcome.transport_failures * 10 > questions.len() {
        return Err(ProbeError::TooManyFailures {
            failed: outcome.transport_failures,
            total: questions.len(),
        });
    }
    Ok(outcome)
}
