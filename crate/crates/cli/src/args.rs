use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Caption rewriting and yes/no hallucination probing.
#[derive(Debug, Parser)]
#[command(name = "recap", version)]
pub struct Cli {
    /// TOML or JSON file with defaults for any flag. Flags win over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// error, warn, info or debug.
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,
    /// Seed for sampling and question building. Overrides any seed in the
    /// config file.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rewrite captions into keyword-constrained paraphrases.
    Rewrite(RewriteArgs),
    /// Build a balanced yes/no object question bank.
    BuildQuestions(BuildQuestionsArgs),
    /// Ask a model every question in a bank.
    Probe(ProbeArgs),
    /// Score verdicts against their questions.
    Evaluate(EvaluateArgs),
    /// Render reports, or a baseline/treated comparison.
    Report(ReportArgs),
    /// Check a question file against expected yes/no counts.
    Validate(ValidateArgs),
}

impl Command {
    /// Config-file section holding this subcommand's settings.
    pub fn section(&self) -> &'static str {
        match self {
            Command::Rewrite(_) => "rewrite",
            Command::BuildQuestions(_) => "build_questions",
            Command::Probe(_) => "probe",
            Command::Evaluate(_) => "evaluate",
            Command::Report(_) => "report",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointArgs {
    /// Base URL of an OpenAI-compatible API, e.g. https://api.openai.com/v1
    #[arg(long = "endpoint", value_name = "URL")]
    pub base_url: Option<String>,
    /// Model name sent with every request.
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// Requests per minute across all workers.
    #[arg(long, value_name = "N")]
    pub rpm: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long, value_name = "SECONDS")]
    pub timeout: Option<f64>,
    /// Environment variable holding the API key [default: OPENAI_API_KEY]
    #[arg(long, value_name = "VAR")]
    pub api_key_env: Option<String>,
    /// Retries after a timeout, 429 or 5xx [default: 3]
    #[arg(long, value_name = "N")]
    pub max_retries: Option<u32>,
    /// First retry delay in milliseconds; doubles per retry.
    #[arg(long, value_name = "MS")]
    pub backoff_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingArgs {
    #[arg(long, value_name = "NAME")]
    pub optimizer: Option<String>,
    /// Two comma-separated values.
    #[arg(long, value_name = "B1,B2", value_delimiter = ',', num_args = 2)]
    pub betas: Option<Vec<f64>>,
    #[arg(long, value_name = "RATE")]
    pub lr: Option<f64>,
    #[arg(long, value_name = "RATE")]
    pub weight_decay: Option<f64>,
    #[arg(long, value_name = "N")]
    pub warmup_steps: Option<u32>,
    #[arg(long, value_name = "NAME")]
    pub schedule: Option<String>,
    #[arg(long, value_name = "PIXELS")]
    pub image_size: Option<u32>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<u32>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<u32>,
    #[arg(long, value_name = "RATE")]
    pub fine_tune_lr: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriteArgs {
    /// Image-caption pairs (JSONL).
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Rewrite records (JSONL).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Rewrites per caption [default: 5]
    #[arg(long, value_name = "N")]
    pub r: Option<u32>,
    /// Rewrite sampling temperature [default: 1.0]
    #[arg(long, value_name = "T")]
    pub temperature: Option<f64>,
    /// Keyword coverage below which a rewrite is retried [default: 0.9]
    #[arg(long, value_name = "FRACTION")]
    pub min_coverage: Option<f64>,
    /// Retries for a low-coverage rewrite [default: 2]
    #[arg(long, value_name = "N")]
    pub max_coverage_retries: Option<u32>,
    /// Set from the config file; `--seed` overrides it.
    #[arg(skip)]
    pub seed: Option<u64>,
    /// Rewrite only this many randomly chosen pairs.
    #[arg(long, value_name = "N")]
    pub sample: Option<usize>,
    /// Items processed at once [default: 8]
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Reply length cap [default: 512]
    #[arg(long, value_name = "N")]
    pub max_tokens: Option<u32>,
    /// Directory with stage1.txt, stage1_demo.json, stage2.txt, stage2_demo.json.
    #[arg(long, value_name = "DIR")]
    pub templates: Option<PathBuf>,
    /// Progress log; rerunning with the same file resumes the job.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Also write rewrites.jsonl and a training manifest.json here.
    #[arg(long, value_name = "DIR")]
    pub manifest_dir: Option<PathBuf>,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildQuestionsArgs {
    /// Ground-truth object lists (JSONL).
    #[arg(long, value_name = "FILE")]
    pub objects: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Questions per image, half yes and half no [default: 6]
    #[arg(long, value_name = "N")]
    pub per_image: Option<usize>,
    /// popular or random [default: popular]
    #[arg(long, value_name = "STRATEGY")]
    pub strategy: Option<String>,
    /// Set from the config file; `--seed` overrides it.
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeArgs {
    /// Question bank (JSONL).
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
    /// Verdicts (JSONL).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Raw exchanges (JSONL) [default: beside --out]
    #[arg(long, value_name = "FILE")]
    pub transcripts: Option<PathBuf>,
    /// strict or lenient [default: lenient]
    #[arg(long, value_name = "POLICY")]
    pub policy: Option<String>,
    /// Questions in flight at once [default: 8]
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Text placed before every question.
    #[arg(long, value_name = "TEXT")]
    pub preamble: Option<String>,
    /// Image URL pattern with an {image_id} placeholder; omit for text-only.
    #[arg(long, value_name = "PATTERN")]
    pub image_url: Option<String>,
    /// Progress log; rerunning with the same file resumes the run.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Sampling temperature for answers [default: 0.0]
    #[arg(long, value_name = "T")]
    pub temperature: Option<f64>,
    /// Reply length cap [default: 64]
    #[arg(long, value_name = "N")]
    pub max_tokens: Option<u32>,
    /// Store 0 instead of measured latency, for reproducible files.
    #[arg(long)]
    pub no_latency: bool,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub verdicts: Option<PathBuf>,
    /// Name shown in reports [default: model]
    #[arg(long = "name", value_name = "NAME")]
    pub model_name: Option<String>,
    /// Score parseable answers only.
    #[arg(long)]
    pub exclude_unparseable: bool,
    /// Report (JSON).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// Report without the treatment.
    #[arg(long, value_name = "FILE", requires = "treated")]
    pub baseline: Option<PathBuf>,
    /// Report with the treatment.
    #[arg(long, value_name = "FILE", requires = "baseline")]
    pub treated: Option<PathBuf>,
    /// Plain reports to tabulate.
    #[arg(value_name = "REPORT")]
    pub reports: Vec<PathBuf>,
    /// markdown, csv or json [default: markdown]
    #[arg(long, value_name = "FORMAT")]
    pub format: Option<String>,
    /// Write here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateArgs {
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
    /// Compare with the published fine-grained counts (200 questions).
    #[arg(long, conflicts_with = "expect")]
    pub expect_fghe: bool,
    /// Compare with counts from this JSON file.
    #[arg(long, value_name = "FILE")]
    pub expect: Option<PathBuf>,
}
