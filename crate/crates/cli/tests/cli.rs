use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recap_core::mock::{MockBackend, MockReply, MockRequest};
use serde_json::Value;

fn recap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recap"))
        .args(args)
        .env_remove("RECAP_LOG")
        .output()
        .expect("run recap")
}

async fn recap_async(args: Vec<String>) -> Output {
    tokio::task::spawn_blocking(move || {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        recap(&refs)
    })
    .await
    .unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn summary(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().last().expect("summary line");
    serde_json::from_str(last).expect("summary is JSON")
}

fn help(sub: &str) -> String {
    let out = recap(&[sub, "--help"]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn help_lists_every_documented_flag() {
    let expected: [(&str, &[&str]); 6] = [
        (
            "rewrite",
            &[
                "--input",
                "--out",
                "--r",
                "--temperature",
                "--min-coverage",
                "--seed",
                "--sample",
                "--endpoint",
                "--workers",
                "--templates",
                "--model",
                "--rpm",
                "--timeout",
                "--api-key-env",
                "--checkpoint",
                "--manifest-dir",
                "--epochs",
                "--betas",
            ],
        ),
        (
            "build-questions",
            &["--objects", "--per-image", "--strategy", "--seed", "--out"],
        ),
        (
            "probe",
            &[
                "--questions",
                "--endpoint",
                "--workers",
                "--out",
                "--transcripts",
                "--policy",
                "--model",
                "--rpm",
                "--timeout",
                "--api-key-env",
                "--resume",
                "--preamble",
                "--image-url",
            ],
        ),
        (
            "evaluate",
            &["--questions", "--verdicts", "--out", "--exclude-unparseable"],
        ),
        ("report", &["--baseline", "--treated", "--format"]),
        ("validate", &["--questions", "--expect-fghe", "--expect"]),
    ];
    for (sub, flags) in expected {
        let text = help(sub);
        for flag in flags {
            assert!(
                text.contains(&format!("{flag} ")),
                "`recap {sub} --help` lacks {flag}\n{text}"
            );
        }
        for global in ["--config", "--log-level"] {
            assert!(text.contains(global), "{sub} lacks {global}");
        }
    }
}

#[test]
fn missing_required_flag_exits_1_naming_it() {
    let out = recap(&["evaluate", "--questions", &fixture("eval_questions.jsonl")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--verdicts"));
}

#[test]
fn unknown_subcommand_exits_1() {
    let out = recap(&["transmogrify"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unreadable_input_exits_2() {
    let out = recap(&[
        "evaluate",
        "--questions",
        "/nonexistent/q.jsonl",
        "--verdicts",
        "/nonexistent/v.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_prints_four_metrics() {
    let s = summary(&recap(&[
        "evaluate",
        "--questions",
        &fixture("eval_questions.jsonl"),
        "--verdicts",
        &fixture("eval_verdicts.jsonl"),
    ]));
    assert_eq!(s["command"], "evaluate");
    for m in ["accuracy", "precision", "recall", "f1"] {
        assert_eq!(s[m].as_f64(), Some(50.0), "{m}");
    }
}

#[test]
fn bundled_fine_grained_sample_validates() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fghe.sample.jsonl");
    let s = summary(&recap(&[
        "validate",
        "--questions",
        data.to_str().unwrap(),
        "--expect-fghe",
    ]));
    assert_eq!(s["passed"], true);
    assert_eq!(s["questions"], 200);
}

#[test]
fn failed_validation_exits_2_with_diffs() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fghe.sample.jsonl");
    let text = std::fs::read_to_string(data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short.jsonl");
    let kept: Vec<&str> = text.lines().skip(1).collect();
    std::fs::write(&short, kept.join("\n") + "\n").unwrap();
    let out = recap(&[
        "validate",
        "--questions",
        short.to_str().unwrap(),
        "--expect-fghe",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected"));
}

#[test]
fn object_questions_are_not_fine_grained() {
    let out = recap(&[
        "validate",
        "--questions",
        &fixture("eval_questions.jsonl"),
        "--expect-fghe",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("recap.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 11\n[build_questions]\nobjects = {:?}\nper_image = 2\n",
            fixture("objects.jsonl")
        ),
    )
    .unwrap();
    let out_path = dir.path().join("bank.jsonl");
    let s = summary(&recap(&[
        "--config",
        config.to_str().unwrap(),
        "build-questions",
        "--out",
        out_path.to_str().unwrap(),
    ]));
    assert_eq!(s["questions"], 12);

    // a flag beats the file
    let s = summary(&recap(&[
        "--config",
        config.to_str().unwrap(),
        "build-questions",
        "--per-image",
        "4",
        "--out",
        out_path.to_str().unwrap(),
    ]));
    assert_eq!(s["questions"], 24);
}

#[test]
fn config_typos_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("recap.toml");
    std::fs::write(&config, "[build_questions]\nper_imag = 2\n").unwrap();
    let out = recap(&[
        "--config",
        config.to_str().unwrap(),
        "build-questions",
        "--out",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("per_imag"));
}

const OPENERS: [&str; 4] = ["In this picture", "Here", "We can see that", "The photo shows"];

fn bracketed(text: &str) -> &str {
    let start = text.rfind('[').map_or(0, |i| i + 1);
    let end = text.rfind(']').unwrap_or(text.len());
    &text[start..end]
}

/// Extraction lists caption words of four or more letters as nouns;
/// rewrites name every keyword after an opener picked by the request seed;
/// probes answer yes for objects with an even number of letters.
fn pipeline_responder(req: &MockRequest) -> MockReply {
    let text = req.last_text();
    if text.starts_with("Extract") {
        let nouns: Vec<&str> = bracketed(&text).split(' ').filter(|w| w.len() > 3).collect();
        return MockReply::text(format!("Nouns: {}\nVerbs:\nAdjectives:", nouns.join(", ")));
    }
    if text.starts_with("The generated sentences") {
        let opener = OPENERS[(req.seed().unwrap_or(0) % OPENERS.len() as u64) as usize];
        return MockReply::text(format!("\"{opener}: {}.\"", bracketed(&text)));
    }
    let object = text
        .strip_prefix("Is there a ")
        .and_then(|t| t.split(" in the image?").next())
        .unwrap_or("");
    if object.len().is_multiple_of(2) {
        MockReply::text("Yes, there is.")
    } else {
        MockReply::text(format!("There is no {object}."))
    }
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares with the committed golden, or rewrites it when
/// `RECAP_UPDATE_GOLDEN` is set.
fn check_golden(name: &str, produced: &Path) {
    let got = std::fs::read_to_string(produced).unwrap();
    let path = golden_dir().join(name);
    if std::env::var_os("RECAP_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &got).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}", path.display()));
    assert_eq!(got, want, "{name} differs from its golden");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pipeline_runs_end_to_end_against_mock() {
    let mock = MockBackend::with_responder(pipeline_responder).await;
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let endpoint = |args: &mut Vec<String>| {
        args.extend([
            "--endpoint".into(),
            mock.base_url().to_string(),
            "--model".into(),
            "mock-model".into(),
        ]);
    };

    let mut args: Vec<String> = [
        "rewrite",
        "--input",
        &fixture("pairs.jsonl"),
        "--out",
        &p("rewrites.jsonl"),
    ]
    .map(String::from)
    .to_vec();
    args.extend(
        [
            "--r",
            "3",
            "--seed",
            "17",
            "--manifest-dir",
            &p("train"),
            "--epochs",
            "1",
        ]
        .map(String::from),
    );
    endpoint(&mut args);
    let s = summary(&recap_async(args).await);
    assert_eq!(s["records"], 12);
    assert_eq!(s["mean_coverage"], 1.0);

    let args = [
        "build-questions",
        "--objects",
        &fixture("objects.jsonl"),
        "--out",
        &p("pope.jsonl"),
        "--seed",
        "7",
    ]
    .map(String::from)
    .to_vec();
    let s = summary(&recap_async(args).await);
    assert_eq!(s["questions"], 36);
    assert_eq!(s["yes"], 18);

    let mut args: Vec<String> = [
        "probe",
        "--questions",
        &p("pope.jsonl"),
        "--out",
        &p("verdicts.jsonl"),
        "--no-latency",
    ]
    .map(String::from)
    .to_vec();
    endpoint(&mut args);
    let s = summary(&recap_async(args).await);
    assert_eq!(s["questions"], 36);
    assert_eq!(s["transport_failures"], 0);
    assert!(Path::new(&p("verdicts.transcripts.jsonl")).exists());

    let args = [
        "evaluate",
        "--questions",
        &p("pope.jsonl"),
        "--verdicts",
        &p("verdicts.jsonl"),
        "--name",
        "mock",
        "--out",
        &p("report.json"),
    ]
    .map(String::from)
    .to_vec();
    let s = summary(&recap_async(args).await);
    assert_eq!(s["command"], "evaluate");

    let args = ["report", &p("report.json"), "--out", &p("report.md")]
        .map(String::from)
        .to_vec();
    summary(&recap_async(args).await);

    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(p("train/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["hyperparameters"]["epochs"], 1);
    assert_eq!(manifest["hyperparameters"]["warmup_steps"], 2000);

    for name in [
        "rewrites.jsonl",
        "pope.jsonl",
        "verdicts.jsonl",
        "verdicts.transcripts.jsonl",
        "report.json",
        "report.md",
    ] {
        check_golden(name, Path::new(&p(name)));
    }
}
