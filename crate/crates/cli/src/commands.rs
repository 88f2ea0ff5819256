use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde_json::{json, Value};
use tracing::info;

use recap_core::datamodel::{
    read_jsonl, write_jsonl, ImageCaptionPair, ImageObjects, Label, Parsed, ProbeQuestion, ProbeVerdict,
};
use recap_core::gateway::{EndpointConfig, Gateway};
use recap_core::metrics::{compare, render, EvalReport, Format, Renderable};
use recap_core::probe::{run_probe, AnswerPolicy, ProbeRunConfig};
use recap_core::questions::{
    build_pope_bank, check_fghe, validate_bank_stats, BankConfig, BankStats, NegativeStrategy,
};
use recap_core::rewrite::{
    emit_training_manifest, rewrite_dataset, sample_pairs, PromptTemplates, RewriteJobConfig,
    TrainingHyperparameters,
};

use crate::args::{
    BuildQuestionsArgs, Command, EndpointArgs, EvaluateArgs, ProbeArgs, ReportArgs, RewriteArgs,
    TrainingArgs, ValidateArgs,
};
use crate::config::FileConfig;
use crate::Failure;

pub struct Context {
    pub file: FileConfig,
    /// `--seed` from the command line.
    pub seed: Option<u64>,
}

impl Context {
    /// Command-line seed, then the section's seed, then the file's
    /// top-level seed, then 0.
    fn seed(&self, section_seed: Option<u64>) -> u64 {
        self.seed
            .or(section_seed)
            .or_else(|| self.file.u64("seed"))
            .unwrap_or(0)
    }
}

fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, Failure> {
    value
        .clone()
        .ok_or_else(|| Failure::Usage(format!("missing required flag {flag}")))
}

fn parse_choice<T: std::str::FromStr<Err = String>>(value: Option<&str>, default: T) -> Result<T, Failure> {
    value.map_or(Ok(default), |v| v.parse().map_err(Failure::Usage))
}

pub async fn dispatch(ctx: &Context, command: Command) -> Result<Value, Failure> {
    let section = command.section();
    let file = &ctx.file;
    match command {
        Command::Rewrite(a) => rewrite(ctx, file.layer(section, &a)?).await,
        Command::BuildQuestions(a) => build_questions(ctx, file.layer(section, &a)?),
        Command::Probe(a) => probe(file.layer(section, &a)?).await,
        Command::Evaluate(a) => evaluate(file.layer(section, &a)?),
        Command::Report(a) => report(file.layer(section, &a)?),
        Command::Validate(a) => validate(file.layer(section, &a)?),
    }
}

fn endpoint(a: &EndpointArgs) -> Result<EndpointConfig, Failure> {
    let mut cfg = EndpointConfig::new(
        required(&a.base_url, "--endpoint")?,
        required(&a.model, "--model")?,
    );
    cfg.requests_per_minute = a.rpm;
    if let Some(t) = a.timeout {
        cfg.timeout_s = t;
    }
    if let Some(v) = &a.api_key_env {
        cfg.api_key_env = v.clone();
    }
    if let Some(n) = a.max_retries {
        cfg.max_retries = n;
    }
    if let Some(ms) = a.backoff_ms {
        cfg.backoff_base_ms = ms;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn hyperparameters(t: &TrainingArgs) -> Result<TrainingHyperparameters, Failure> {
    let mut hp = TrainingHyperparameters::default();
    if let Some(v) = &t.optimizer {
        hp.optimizer = v.clone();
    }
    if let Some(b) = &t.betas {
        let [b1, b2] = b[..] else {
            return Err(Failure::Usage("--betas takes exactly two values".into()));
        };
        hp.betas = [b1, b2];
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = t.$field {
                hp.$field = v;
            }
        )*};
    }
    set!(
        lr,
        weight_decay,
        warmup_steps,
        image_size,
        epochs,
        batch_size,
        fine_tune_lr
    );
    if let Some(v) = &t.schedule {
        hp.schedule = v.clone();
    }
    Ok(hp)
}

async fn rewrite(ctx: &Context, a: RewriteArgs) -> Result<Value, Failure> {
    let input = required(&a.input, "--input")?;
    let out = required(&a.out, "--out")?;
    let endpoint = endpoint(&a.endpoint)?;
    let hp = hyperparameters(&a.training)?;
    let defaults = RewriteJobConfig::default();
    let cfg = RewriteJobConfig {
        r: a.r.unwrap_or(defaults.r),
        temperature: a.temperature.unwrap_or(defaults.temperature),
        max_coverage_retries: a.max_coverage_retries.unwrap_or(defaults.max_coverage_retries),
        min_coverage: a.min_coverage.unwrap_or(defaults.min_coverage),
        seed: ctx.seed(a.seed),
        workers: a.workers.unwrap_or(defaults.workers),
        max_tokens: a.max_tokens.unwrap_or(defaults.max_tokens),
        checkpoint: a.checkpoint.clone(),
        ..defaults
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let templates = match &a.templates {
        Some(dir) => PromptTemplates::load(dir)?,
        None => PromptTemplates::default(),
    };

    let mut pairs: Vec<ImageCaptionPair> = read_jsonl(&input)?;
    let available = pairs.len();
    if let Some(n) = a.sample {
        pairs = sample_pairs(&pairs, n, cfg.seed)?;
    }
    info!(pairs = pairs.len(), available, r = cfg.r, "starting rewrite job");
    let gateway = Gateway::new(endpoint)?;
    let outcome = rewrite_dataset(&gateway, &pairs, &cfg, &templates).await?;
    write_jsonl(&outcome.records, &out).with_context(|| format!("writing {}", out.display()))?;
    let manifest = match &a.manifest_dir {
        Some(dir) => Some(emit_training_manifest(&outcome.records, dir, &hp)?),
        None => None,
    };
    let mean_coverage =
        outcome.records.iter().map(|r| r.coverage).sum::<f64>() / outcome.records.len().max(1) as f64;
    Ok(json!({
        "command": "rewrite",
        "pairs": pairs.len(),
        "records": outcome.records.len(),
        "failed_items": outcome.failures.len(),
        "resumed_items": outcome.resumed,
        "mean_coverage": round4(mean_coverage),
        "duplicate_rate": round4(outcome.duplicate_rate),
        "out": out,
        "manifest": manifest,
    }))
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

fn build_questions(ctx: &Context, a: BuildQuestionsArgs) -> Result<Value, Failure> {
    let objects = required(&a.objects, "--objects")?;
    let out = required(&a.out, "--out")?;
    let cfg = BankConfig {
        questions_per_image: a.per_image.unwrap_or(6),
        negative_strategy: parse_choice(a.strategy.as_deref(), NegativeStrategy::Popular)?,
        seed: ctx.seed(a.seed),
    };
    let images: Vec<ImageObjects> = read_jsonl(&objects)?;
    let bank = build_pope_bank(&images, &cfg)?;
    write_jsonl(&bank, &out)?;
    let yes = bank.iter().filter(|q| q.label == Label::Yes).count();
    Ok(json!({
        "command": "build-questions",
        "images": images.len(),
        "images_used": bank.len() / cfg.questions_per_image,
        "questions": bank.len(),
        "yes": yes,
        "no": bank.len() - yes,
        "bank_id": recap_core::metrics::bank_id(&bank),
        "out": out,
    }))
}

/// `verdicts.jsonl` -> `verdicts.transcripts.jsonl`
fn transcripts_beside(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("verdicts");
    out.with_file_name(format!("{stem}.transcripts.jsonl"))
}

async fn probe(a: ProbeArgs) -> Result<Value, Failure> {
    let questions_path = required(&a.questions, "--questions")?;
    let out = required(&a.out, "--out")?;
    let transcripts = a.transcripts.clone().unwrap_or_else(|| transcripts_beside(&out));
    let endpoint = endpoint(&a.endpoint)?;
    let defaults = ProbeRunConfig::default();
    let cfg = ProbeRunConfig {
        workers: a.workers.unwrap_or(defaults.workers),
        prompt_preamble: a.preamble.clone(),
        answer_policy: parse_choice(a.policy.as_deref(), AnswerPolicy::Lenient)?,
        resume_path: a.resume.clone(),
        image_url_template: a.image_url.clone(),
        temperature: a.temperature.unwrap_or(defaults.temperature),
        max_tokens: a.max_tokens.unwrap_or(defaults.max_tokens),
        measure_latency: !a.no_latency,
    };
    if cfg.workers == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    let questions: Vec<ProbeQuestion> = read_jsonl(&questions_path)?;
    let gateway = Gateway::new(endpoint)?;
    let outcome = run_probe(&gateway, &questions, &cfg).await?;
    write_jsonl(&outcome.verdicts, &out)?;
    write_jsonl(&outcome.transcripts, &transcripts)?;
    let unparseable = outcome
        .verdicts
        .iter()
        .filter(|v| v.parsed == Parsed::Unparseable)
        .count();
    Ok(json!({
        "command": "probe",
        "questions": questions.len(),
        "correct": outcome.verdicts.iter().filter(|v| v.correct).count(),
        "unparseable": unparseable,
        "transport_failures": outcome.transport_failures,
        "resumed": outcome.resumed,
        "out": out,
        "transcripts": transcripts,
    }))
}

fn evaluate(a: EvaluateArgs) -> Result<Value, Failure> {
    let questions_path = required(&a.questions, "--questions")?;
    let verdicts_path = required(&a.verdicts, "--verdicts")?;
    let questions: Vec<ProbeQuestion> = read_jsonl(&questions_path)?;
    let verdicts: Vec<ProbeVerdict> = read_jsonl(&verdicts_path)?;
    let name = a.model_name.clone().unwrap_or_else(|| "model".into());
    let report = EvalReport::evaluate(&name, &questions, &verdicts, a.exclude_unparseable)?;
    if let Some(out) = &a.out {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(json!({
        "command": "evaluate",
        "model": report.model_name,
        "bank_id": report.bank_id,
        "questions": questions.len(),
        "accuracy": report.metrics.accuracy,
        "precision": report.metrics.precision,
        "recall": report.metrics.recall,
        "f1": report.metrics.f1,
        "unparseable_rate": report.counts.unparseable_rate(),
        "out": a.out,
    }))
}

fn read_report(path: &Path) -> Result<EvalReport, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: EvalReport =
        serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))?;
    report.check_consistency()?;
    Ok(report)
}

fn report(a: ReportArgs) -> Result<Value, Failure> {
    let format: Format = parse_choice(a.format.as_deref(), Format::Markdown)?;
    let mut items = Vec::new();
    for path in &a.reports {
        items.push(Renderable::Report(read_report(path)?));
    }
    match (&a.baseline, &a.treated) {
        (Some(b), Some(t)) => items.push(Renderable::Delta(compare(&read_report(b)?, &read_report(t)?)?)),
        (None, None) => {}
        _ => return Err(Failure::Usage("--baseline and --treated go together".into())),
    }
    if items.is_empty() {
        return Err(Failure::Usage(
            "give report files, or --baseline with --treated".into(),
        ));
    }
    let document = render(&items, format)?;
    match &a.out {
        Some(out) => std::fs::write(out, &document).with_context(|| format!("writing {}", out.display()))?,
        None => print!("{document}"),
    }
    Ok(json!({
        "command": "report",
        "items": items.len(),
        "format": a.format.as_deref().unwrap_or("markdown"),
        "out": a.out,
    }))
}

fn validate(a: ValidateArgs) -> Result<Value, Failure> {
    let path = required(&a.questions, "--questions")?;
    let questions: Vec<ProbeQuestion> = read_jsonl(&path)?;
    let expected = if a.expect_fghe {
        check_fghe(&questions)?;
        Some(BankStats::fghe_reference())
    } else if let Some(p) = &a.expect {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Some(serde_json::from_str::<BankStats>(&text).with_context(|| format!("parsing {}", p.display()))?)
    } else {
        None
    };
    let stats = BankStats::of(&questions);
    if let Some(expected) = expected {
        let report = validate_bank_stats(&questions, &expected);
        if !report.passed {
            let diffs: Vec<String> = report.diffs.iter().map(ToString::to_string).collect();
            return Err(Failure::Runtime(anyhow::anyhow!(
                "{} does not match the expected counts: {}",
                path.display(),
                diffs.join("; ")
            )));
        }
    }
    Ok(json!({
        "command": "validate",
        "questions": questions.len(),
        "passed": true,
        "stats": stats,
    }))
}
