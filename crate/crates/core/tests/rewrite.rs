use std::collections::HashSet;

use proptest::prelude::*;
use recap_core::datamodel::{ImageCaptionPair, KeywordSet};
use recap_core::error::RewriteError;
use recap_core::gateway::Gateway;
use recap_core::mock::{MockBackend, MockReply, MockRequest};
use recap_core::rewrite::{
    extract_keywords, generate_rewrite, rewrite_dataset, sample_pairs, ParseMode, PromptTemplates,
    RewriteJobConfig,
};

fn pair(id: &str, caption: &str) -> ImageCaptionPair {
    ImageCaptionPair {
        image_id: id.into(),
        image_path: format!("images/{id}.jpg"),
        caption: caption.into(),
    }
}

fn bracketed(text: &str) -> &str {
    let start = text.rfind('[').map_or(0, |i| i + 1);
    let end = text.rfind(']').unwrap_or(text.len());
    &text[start..end]
}

/// Extraction: every caption word longer than two letters is a noun.
/// Rewrite: a sentence naming every keyword.
fn covering_responder(req: &MockRequest) -> MockReply {
    let text = req.last_text();
    let inside = bracketed(&text);
    if text.starts_with("Extract") {
        let nouns: Vec<&str> = inside.split(' ').filter(|w| w.len() > 2).collect();
        MockReply::text(format!("Nouns: {}\nVerbs:\nAdjectives:", nouns.join(", ")))
    } else {
        MockReply::text(format!("\"A picture showing {}.\"", inside))
    }
}

fn keywords(nouns: &[&str], verbs: &[&str], adjectives: &[&str]) -> KeywordSet {
    let v = |l: &[&str]| l.iter().map(|s| s.to_string()).collect();
    KeywordSet::normalized(v(nouns), v(verbs), v(adjectives))
}

#[tokio::test]
async fn ducks_caption_yields_labeled_keywords() {
    let mock = MockBackend::scripted(["Nouns: ducks, image, water\nVerbs: flying\nAdjectives: right"]).await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let caption = "several ducks are flying to the right of the image over water";
    let (set, mode) = extract_keywords(&gw, &PromptTemplates::default(), caption, 0.0, 256)
        .await
        .unwrap();
    assert_eq!(mode, ParseMode::Labeled);
    assert_eq!(
        set,
        keywords(&["ducks", "image", "water"], &["flying"], &["right"])
    );
    let req = &mock.requests()[0];
    assert_eq!(req.messages().len(), 3);
    assert_eq!(
        req.last_text(),
        format!("Extract verbs, nouns, and adjectives from [{caption}]")
    );
}

#[tokio::test]
async fn empty_extraction_is_asked_twice_then_fails() {
    let mock = MockBackend::scripted(["Nouns:\nVerbs:", "Nouns: none"]).await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let err = extract_keywords(&gw, &PromptTemplates::default(), "a cat", 0.0, 256)
        .await
        .unwrap_err();
    assert!(matches!(err, RewriteError::EmptyExtraction(_)), "{err:?}");
    assert_eq!(mock.request_count(), 2);
}

#[tokio::test]
async fn reask_recovers_from_one_empty_reply() {
    let mock = MockBackend::scripted(["I cannot tell.", "Nouns: cat"]).await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    // an unlabeled reply is a fallback parse, not an empty one
    let (set, mode) = extract_keywords(&gw, &PromptTemplates::default(), "a cat", 0.0, 256)
        .await
        .unwrap();
    assert_eq!(mode, ParseMode::Fallback);
    assert_eq!(set.nouns, ["i cannot tell"]);
    assert_eq!(mock.request_count(), 1);
}

#[tokio::test]
async fn rewrite_is_returned_with_quotes_stripped() {
    let mock = MockBackend::scripted([
        "Ducks are flying right above the calm water.",
        "\"Ducks are flying right above the calm water.\"",
    ])
    .await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let kw = keywords(&["ducks", "water"], &["flying"], &["right"]);
    let t = PromptTemplates::default();
    for _ in 0..2 {
        let text = generate_rewrite(&gw, &t, &kw, 1.0, 256, None).await.unwrap();
        assert_eq!(text, "Ducks are flying right above the calm water.");
    }
    let req = &mock.requests()[0];
    assert_eq!(req.temperature(), Some(1.0));
    let prompt = req.last_text();
    assert_eq!(
        prompt,
        "The generated sentences are required to contain verbs, nouns and adjectives in the given content: [ducks, water, flying, right]"
    );
    let listed: Vec<&str> = bracketed(&prompt).split(", ").collect();
    for k in ["ducks", "water", "flying", "right"] {
        assert_eq!(listed.iter().filter(|x| **x == k).count(), 1);
    }
}

#[tokio::test]
async fn blank_rewrite_is_an_error() {
    let mock = MockBackend::scripted(["  \"\"  "]).await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let kw = keywords(&["cat"], &[], &[]);
    let err = generate_rewrite(&gw, &PromptTemplates::default(), &kw, 1.0, 64, None)
        .await
        .unwrap_err();
    assert!(matches!(err, RewriteError::BlankRewrite));
}

#[tokio::test]
async fn two_pairs_at_r5_give_ten_full_coverage_records() {
    let mock = MockBackend::with_responder(covering_responder).await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let pairs = [pair("a", "a dog chasing a ball"), pair("b", "two cats sleeping")];
    let out = rewrite_dataset(
        &gw,
        &pairs,
        &RewriteJobConfig::default(),
        &PromptTemplates::default(),
    )
    .await
    .unwrap();
    assert_eq!(out.records.len(), 10);
    assert!(out.failures.is_empty());
    let order: Vec<(&str, u32)> = out
        .records
        .iter()
        .map(|r| (r.image_id.as_str(), r.rewrite_index))
        .collect();
    let expected: Vec<(&str, u32)> = ["a", "b"]
        .iter()
        .flat_map(|id| (1..=5).map(move |i| (*id, i)))
        .collect();
    assert_eq!(order, expected);
    for r in &out.records {
        assert_eq!(r.coverage, 1.0);
        assert_eq!(r.attempts, 1);
    }
    // 2 extractions + 10 rewrites, each rewrite with its own seed
    assert_eq!(mock.request_count(), 12);
    let seeds: HashSet<u64> = mock.requests().iter().filter_map(|r| r.seed()).collect();
    assert_eq!(seeds.len(), 10);
    // identical rewrites of one caption are kept and counted
    assert_eq!(out.duplicate_rate, 8.0 / 10.0);
}

#[tokio::test]
async fn low_coverage_rewrite_is_retried() {
    let mock = MockBackend::scripted([
        "Nouns: ducks, water\nVerbs: flying",
        "Ducks over the lake.",
        "Ducks are flying above the water.",
    ])
    .await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let cfg = RewriteJobConfig {
        r: 1,
        ..Default::default()
    };
    let out = rewrite_dataset(
        &gw,
        &[pair("d", "ducks flying over water")],
        &cfg,
        &PromptTemplates::default(),
    )
    .await
    .unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].attempts, 2);
    assert_eq!(out.records[0].coverage, 1.0);
    assert_eq!(out.records[0].text, "Ducks are flying above the water.");
}

#[tokio::test]
async fn best_attempt_is_kept_when_retries_run_out() {
    let mock = MockBackend::scripted([
        "Nouns: ducks, water, lake\nVerbs: flying",
        "Ducks over the lake.",
        "Ducks flying over the lake.",
        "Birds.",
    ])
    .await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let cfg = RewriteJobConfig {
        r: 1,
        ..Default::default()
    };
    let out = rewrite_dataset(
        &gw,
        &[pair("d", "ducks flying over a lake")],
        &cfg,
        &PromptTemplates::default(),
    )
    .await
    .unwrap();
    let rec = &out.records[0];
    assert_eq!(rec.attempts, 3);
    assert_eq!(rec.text, "Ducks flying over the lake.");
    assert_eq!(rec.coverage, 0.75);
}

#[tokio::test]
async fn one_failed_item_in_ten_is_tolerated_two_are_not() {
    let fail_on = |bad: &'static [&'static str]| {
        move |req: &MockRequest| {
            let text = req.last_text();
            if bad.iter().any(|b| text.contains(b)) {
                MockReply::Status(400)
            } else {
                covering_responder(req)
            }
        }
    };
    let pairs: Vec<_> = (0..10)
        .map(|i| pair(&format!("p{i}"), &format!("caption number{i}")))
        .collect();
    let cfg = RewriteJobConfig {
        r: 2,
        ..Default::default()
    };

    let mock = MockBackend::with_responder(fail_on(&["number3"])).await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let out = rewrite_dataset(&gw, &pairs, &cfg, &PromptTemplates::default())
        .await
        .unwrap();
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].image_id, "p3");
    assert_eq!(out.records.len(), 18);

    let mock = MockBackend::with_responder(fail_on(&["number3", "number7"])).await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let err = rewrite_dataset(&gw, &pairs, &cfg, &PromptTemplates::default())
        .await
        .unwrap_err();
    assert!(matches!(
        err,
        RewriteError::TooManyFailures { failed: 2, total: 10 }
    ));
}

#[tokio::test]
async fn checkpointed_items_are_not_requested_again() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RewriteJobConfig {
        r: 2,
        checkpoint: Some(dir.path().join("rewrite.ckpt")),
        ..Default::default()
    };
    let pairs = [pair("a", "a red bus"), pair("b", "a green tram")];
    let mock = MockBackend::with_responder(covering_responder).await;
    let gw = Gateway::new(mock.endpoint()).unwrap();
    let first = rewrite_dataset(&gw, &pairs, &cfg, &PromptTemplates::default())
        .await
        .unwrap();
    let calls = mock.request_count();
    let second = rewrite_dataset(&gw, &pairs, &cfg, &PromptTemplates::default())
        .await
        .unwrap();
    assert_eq!(mock.request_count(), calls);
    assert_eq!(second.resumed, 2);
    assert_eq!(first.records, second.records);

    // a different job refuses the old checkpoint
    let other = RewriteJobConfig { r: 3, ..cfg };
    let err = rewrite_dataset(&gw, &pairs, &other, &PromptTemplates::default())
        .await
        .unwrap_err();
    assert!(matches!(err, RewriteError::Checkpoint(_)));
}

fn synthetic_dataset(n: usize) -> Vec<ImageCaptionPair> {
    (0..n)
        .map(|i| pair(&format!("img-{i:05}"), &format!("caption {i}")))
        .collect()
}

#[test]
fn sampling_everything_keeps_dataset_order() {
    let data = synthetic_dataset(50);
    assert_eq!(sample_pairs(&data, 50, 3).unwrap(), data);
}

#[test]
fn sampling_is_seeded() {
    let data = synthetic_dataset(300);
    let a = sample_pairs(&data, 40, 9).unwrap();
    assert_eq!(a, sample_pairs(&data, 40, 9).unwrap());
    assert_ne!(a, sample_pairs(&data, 40, 10).unwrap());
    let ids: HashSet<_> = a.iter().map(|p| &p.image_id).collect();
    assert_eq!(ids.len(), 40);
}

#[test]
fn oversampling_is_an_error() {
    let data = synthetic_dataset(5);
    assert!(matches!(
        sample_pairs(&data, 6, 0),
        Err(RewriteError::SampleTooLarge {
            requested: 6,
            available: 5
        })
    ));
}

#[test]
fn sample_of_500_from_3000_matches_golden() {
    let data = synthetic_dataset(3000);
    let ids: Vec<String> = sample_pairs(&data, 500, 17)
        .unwrap()
        .into_iter()
        .map(|p| p.image_id)
        .collect();
    let golden = include_str!("golden/sample_500_of_3000_seed17.txt");
    let expected: Vec<&str> = golden.lines().collect();
    assert_eq!(ids, expected);
}

fn keyword_strategy() -> impl Strategy<Value = String> {
    "[a-z]{1,6}( [a-z]{1,6})?"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rewrite_prompt_is_injective(
        a in prop::collection::vec(keyword_strategy(), 1..6),
        b in prop::collection::vec(keyword_strategy(), 1..6),
    ) {
        let t = PromptTemplates::default();
        let (ka, kb) = (
            KeywordSet::normalized(a, vec![], vec![]).ordered(),
            KeywordSet::normalized(b, vec![], vec![]).ordered(),
        );
        if ka != kb {
            prop_assert_ne!(t.render_rewrite(&ka), t.render_rewrite(&kb));
        }
    }
}
