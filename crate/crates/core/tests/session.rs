use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use geobench::model::mock::{ConvergingBackend, OracleBackend, ScriptedBackend};
use geobench::model::{BackendError, ChatBackend, CompletionRequest, RetryPolicy};
use geobench::sample::Truth;
use geobench::session::{conversation, replay, EngineConfig, Feedback, FeedbackKind, SessionEngine, SessionError, SessionStatus, TurnKind};
use geobench::{AdminLabels, GeoCoordinate};
use proptest::prelude::*;

fn truth() -> Truth {
    Truth {
        labels: AdminLabels::new("United States", "Washington", "Seattle"),
        coord: Some(GeoCoordinate::new(47.6069, -122.3283).unwrap()),
    }
}

fn image(dir: &std::path::Path) -> String {
    let p = dir.join("street.png");
    std::fs::write(&p, b"not really a png").unwrap();
    p.display().to_string()
}

fn engine(backend: Arc<dyn ChatBackend>, dir: Option<&std::path::Path>) -> SessionEngine {
    let cfg = EngineConfig {
        sessions_dir: dir.map(|d| d.join("sessions")),
        retry: RetryPolicy::none(),
        ..Default::default()
    };
    SessionEngine::new(backend, cfg).unwrap()
}

/// Oracle whose next call fails while `fail` is set.
struct Flaky {
    fail: AtomicBool,
    inner: OracleBackend,
}

impl ChatBackend for Flaky {
    fn id(&self) -> &str {
        "flaky"
    }
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        if self.fail.load(Ordering::SeqCst) {
            return Err(BackendError::Transport("connection reset".into()));
        }
        self.inner.complete(req)
    }
}

#[test]
fn oracle_session_scores_correct_every_turn() {
    let tmp = tempfile::tempdir().unwrap();
    let e = engine(Arc::new(OracleBackend::new()), Some(tmp.path()));
    let s = e.open(&image(tmp.path()), Some(truth()), false).unwrap();
    assert_eq!(s.turns[0].prediction.as_ref().unwrap().city.as_deref(), Some("Seattle"));
    e.submit_feedback(&s.session_id, Feedback::new(FeedbackKind::Clue, "There is a lake.")).unwrap();
    let traj = e.score(&s.session_id).unwrap();
    assert_eq!(traj.len(), 2);
    assert!(traj.iter().all(|p| p.city_correct && p.distance.unwrap().km() == 0.0));
}

#[test]
fn converging_mock_gives_non_increasing_distances() {
    let tmp = tempfile::tempdir().unwrap();
    let e = engine(Arc::new(ConvergingBackend::halving(800.0, 45.0)), None);
    let id = e.open(&image(tmp.path()), Some(truth()), false).unwrap().session_id.clone();
    for i in 0..4 {
        e.submit_feedback(&id, Feedback::new(FeedbackKind::Correction, format!("Look again ({i})."))).unwrap();
    }
    let d: Vec<f64> = e.score(&id).unwrap().iter().map(|p| p.distance.unwrap().km()).collect();
    assert_eq!(d.len(), 5);
    assert!(d.windows(2).all(|w| w[1] <= w[0]), "{d:?}");
    assert!((d[0] - 800.0).abs() < 1e-6 && (d[4] - 50.0).abs() < 1e-6);
}

#[test]
fn scripted_rule_switches_country() {
    let tmp = tempfile::tempdir().unwrap();
    let b = ScriptedBackend::new(r#"{"country": "Portugal", "city": "Lisbon"}"#)
        .rule("portuguese", r#"{"country": "Brazil", "city": "Sao Paulo", "lat": "-23.55", "lon": "-46.63"}"#);
    let e = engine(Arc::new(b), None);
    let id = e.open(&image(tmp.path()), None, false).unwrap().session_id.clone();
    let s = e.submit_feedback(&id, Feedback::new(FeedbackKind::Clue, "The signage is in Portuguese.")).unwrap();
    assert_eq!(s.turns[2].prediction.as_ref().unwrap().country.as_deref(), Some("Brazil"));
    assert!(matches!(e.score(&id), Err(SessionError::NoTruth(_))));
}

#[test]
fn feedback_framing_and_question_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let e = engine(Arc::new(OracleBackend::new()), None);
    let id = e.open(&image(tmp.path()), Some(truth()), false).unwrap().session_id.clone();
    e.submit_feedback(&id, Feedback::new(FeedbackKind::Correction, "Wrong hemisphere.")).unwrap();
    let s = e.submit_feedback(&id, Feedback::question_answer("What side do cars drive on?", "The right.")).unwrap();
    assert_eq!(s.turns[1].text, "[Your prediction is incorrect] Wrong hemisphere.");
    assert!(s.turns[3].text.starts_with("Question: What side do cars drive on?\nAnswer: The right."));
    assert!(e.submit_feedback(&id, Feedback::new(FeedbackKind::Clue, "   ")).is_err());
}

#[test]
fn closed_sessions_refuse_changes() {
    let tmp = tempfile::tempdir().unwrap();
    let e = engine(Arc::new(OracleBackend::new()), None);
    let id = e.open(&image(tmp.path()), Some(truth()), false).unwrap().session_id.clone();
    assert_eq!(e.close(&id).unwrap().status, SessionStatus::Closed);
    let err = e.submit_feedback(&id, Feedback::new(FeedbackKind::Clue, "x")).unwrap_err();
    assert_eq!(err.code(), "session_closed");
    assert_eq!(e.get("missing").unwrap_err().code(), "not_found");
    assert_eq!(e.open("/no/such/image.png", None, false).unwrap_err().code(), "invalid_request");
}

#[test]
fn failed_turns_keep_alternation_and_retry_replaces() {
    let tmp = tempfile::tempdir().unwrap();
    let flaky = Arc::new(Flaky { fail: AtomicBool::new(true), inner: OracleBackend::new() });
    let e = engine(flaky.clone(), Some(tmp.path()));
    let id = e.open(&image(tmp.path()), Some(truth()), false).unwrap().session_id.clone();
    let s = e.get(&id).unwrap();
    assert!(s.turns[0].failed() && s.status == SessionStatus::Open);
    let s = e.submit_feedback(&id, Feedback::new(FeedbackKind::Clue, "Rainy.")).unwrap();
    assert!(s.alternates() && s.turns[2].failed());
    let history = conversation(&s, 16);
    assert!(history.iter().any(|t| t.text == "(no answer)"));
    flaky.fail.store(false, Ordering::SeqCst);
    let s = e.retry(&id).unwrap();
    assert_eq!(s.turns.len(), 3);
    assert!(!s.turns[2].failed());
    assert!(e.retry(&id).is_err());
}

#[test]
fn window_folds_old_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let e = engine(Arc::new(OracleBackend::new()), None);
    let id = e.open(&image(tmp.path()), Some(truth()), false).unwrap().session_id.clone();
    for i in 0..12 {
        e.submit_feedback(&id, Feedback::new(FeedbackKind::Clue, format!("clue number {i}"))).unwrap();
    }
    let s = e.get(&id).unwrap();
    let h = conversation(&s, 8);
    assert!(h.len() <= 10, "{}", h.len());
    assert!(h[0].image.is_some());
    assert!(h.iter().any(|t| t.text.contains("Summary of earlier feedback: 1) clue number 0")));
    assert!(h[h.len() - 2].text.contains("clue number 11"));
    let roles: Vec<_> = h.iter().map(|t| t.role).collect();
    assert!(roles.windows(2).all(|w| w[0] != w[1]), "{roles:?}");
}

#[derive(Debug, Clone)]
enum Op {
    Feedback(u8, bool),
    Retry(bool),
    Close,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0u8..4, any::<bool>()).prop_map(|(k, f)| Op::Feedback(k, f)),
        3 => any::<bool>().prop_map(Op::Retry),
        1 => Just(Op::Close),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn alternation_and_replay_hold_under_random_ops(ops in proptest::collection::vec(op(), 0..14), fail_first in any::<bool>()) {
        let tmp = tempfile::tempdir().unwrap();
        let flaky = Arc::new(Flaky { fail: AtomicBool::new(fail_first), inner: OracleBackend::new() });
        let e = engine(flaky.clone(), Some(tmp.path()));
        let id = e.open(&image(tmp.path()), Some(truth()), false).unwrap().session_id.clone();
        for op in ops {
            let _ = match op {
                Op::Feedback(k, fail) => {
                    flaky.fail.store(fail, Ordering::SeqCst);
                    let fb = match k {
                        0 => Feedback::new(FeedbackKind::Correction, "No."),
                        1 => Feedback::new(FeedbackKind::Clue, "Snow on the ground."),
                        2 => Feedback::new(FeedbackKind::Question, "Which hemisphere?"),
                        _ => Feedback::question_answer("Which hemisphere?", "Northern."),
                    };
                    e.submit_feedback(&id, fb).map(|_| ())
                }
                Op::Retry(fail) => {
                    flaky.fail.store(fail, Ordering::SeqCst);
                    e.retry(&id).map(|_| ())
                }
                Op::Close => e.close(&id).map(|_| ()),
            };
            let s = e.get(&id).unwrap();
            prop_assert!(s.alternates());
            prop_assert!(s.turns.last().unwrap().kind.is_model());
            prop_assert_eq!(s.turns[0].kind, TurnKind::InitialPrediction);
            let replayed = replay(&e.events(&id).unwrap()).unwrap();
            prop_assert_eq!(&replayed, &*s);
        }
        let reloaded = engine(flaky.clone(), Some(tmp.path()));
        let a = serde_json::to_string(&*reloaded.get(&id).unwrap()).unwrap();
        let b = serde_json::to_string(&*e.get(&id).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}
