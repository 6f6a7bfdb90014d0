use std::time::Duration;

use lenspipe_core::profile::{Augmenter, RemoteAugmenter};
use lenspipe_core::scorer::{RemoteScorer, ScoreError};
use lenspipe_core::wire::{AugmentRequest, AugmentTask, HttpTransport, ScoreRequest, ScoreResponse, TransportError};
use lenspipe_core::wire::{call_with_retries, SCORE_PATH};
use lenspipe_mock_scorer::{Faults, MockServer};

fn request(n: usize) -> ScoreRequest {
    let tokens: Vec<String> = (1..=n).map(|k| format!("<I{k}>")).collect();
    ScoreRequest {
        query_id: "q1".into(),
        prompt_text: tokens.iter().map(|t| format!("{t} place")).collect::<Vec<_>>().join("\n"),
        image_png_b64: String::new(),
        candidate_tokens: tokens,
    }
}

fn transport(server: &MockServer, timeout_ms: u64) -> HttpTransport {
    HttpTransport::new(server.url(), Duration::from_millis(timeout_ms))
}

#[test]
fn scores_are_deterministic_and_normalized() {
    let server = MockServer::start(Faults::default()).unwrap();
    let t = transport(&server, 5_000);
    let a: ScoreResponse = call_with_retries(&t, SCORE_PATH, &request(5), 0).unwrap();
    let b: ScoreResponse = call_with_retries(&t, SCORE_PATH, &request(5), 0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.scores.len(), 5);
    assert!((a.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(server.counters().rejected.load(std::sync::atomic::Ordering::SeqCst), 0);
}

#[test]
fn schema_violations_are_client_errors_and_not_retried() {
    let server = MockServer::start(Faults::default()).unwrap();
    let t = transport(&server, 5_000);
    let mut bad = request(3);
    bad.candidate_tokens.swap(0, 1);
    let err = call_with_retries::<_, ScoreResponse>(&t, SCORE_PATH, &bad, 3).unwrap_err();
    assert_eq!(err.attempts, 1);
    assert_eq!(err.last, TransportError::Status(400));
    assert_eq!(server.rejections().len(), 1);
}

#[test]
fn stalls_time_out_then_recover() {
    let server = MockServer::start(Faults {
        stall_first: 2,
        stall: Duration::from_millis(600),
        ..Faults::default()
    })
    .unwrap();
    let t = transport(&server, 150);
    let ok: ScoreResponse = call_with_retries(&t, SCORE_PATH, &request(2), 2).unwrap();
    assert_eq!(ok.scores.len(), 2);
    assert_eq!(server.requests(), 3);
}

#[test]
fn exhausted_retries_report_the_last_error() {
    let server = MockServer::start(Faults {
        stall_first: 10,
        stall: Duration::from_millis(400),
        ..Faults::default()
    })
    .unwrap();
    let err = call_with_retries::<_, ScoreResponse>(&transport(&server, 100), SCORE_PATH, &request(2), 1).unwrap_err();
    assert_eq!(err.attempts, 2);
    assert_eq!(err.last, TransportError::Timeout);
}

#[test]
fn unavailable_and_malformed_are_retried() {
    let server = MockServer::start(Faults {
        unavailable_first: 1,
        malformed_first: 2,
        ..Faults::default()
    })
    .unwrap();
    let r: ScoreResponse = call_with_retries(&transport(&server, 5_000), SCORE_PATH, &request(4), 2).unwrap();
    assert_eq!(r.scores.len(), 4);
    assert_eq!(server.requests(), 3);
}

#[test]
fn wrong_length_is_rejected_by_the_scorer() {
    let server = MockServer::start(Faults {
        wrong_length_first: 1,
        ..Faults::default()
    })
    .unwrap();
    let scorer = RemoteScorer::new(Box::new(transport(&server, 5_000)), 3);
    let prompt = lenspipe_core::matcher::MatchPrompt {
        query_id: "q1".into(),
        text: request(3).prompt_text,
        candidate_ids: vec!["a".into(), "b".into(), "c".into()],
        candidate_texts: vec![String::new(); 3],
        profile_aspects: Default::default(),
        grid_png: None,
    };
    use lenspipe_core::scorer::Scorer;
    assert_eq!(scorer.score(&prompt).unwrap_err(), ScoreError::LengthMismatch { expected: 3, got: 2 });
    assert_eq!(scorer.score(&prompt).unwrap().0.len(), 3);
}

#[test]
fn augmenter_round_trip() {
    let server = MockServer::start(Faults::default()).unwrap();
    let aug = RemoteAugmenter::new(Box::new(transport(&server, 5_000)), 1);
    let req = |task| AugmentRequest {
        image_ref: "photos/cafe.jpg".into(),
        task,
        prompt_text: "Describe.".into(),
    };
    let caption = aug.augment(&req(AugmentTask::Caption)).unwrap();
    assert!(caption.contains("cafe.jpg"));
    let aspects = aug.augment(&req(AugmentTask::Aspects)).unwrap();
    assert!(!aspects.is_empty());
    assert_eq!(aspects, aug.augment(&req(AugmentTask::Aspects)).unwrap());
}
