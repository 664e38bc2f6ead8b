//! Interactive refinement sessions: one image, a model prediction, human
//! feedback, a refined prediction, and so on.
//!
//! State is event-sourced. Every change is an [`Event`] appended to the
//! session's JSON-lines log, and [`replay`] folds a log back into a
//! [`Session`].

mod engine;

pub use engine::{conversation, EngineConfig, SessionEngine};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::DistanceKm;
use crate::jsonl::JsonlError;
use crate::metrics::{score_admin_with, score_distance, NameMatcher, Prediction};
use crate::sample::Truth;

/// Most recent conversation turns sent to the backend before older
/// feedback/prediction pairs are folded into a summary.
pub const HISTORY_WINDOW: usize = 16;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {0} is closed")]
    Closed(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("session {0} has no ground truth")]
    NoTruth(String),
    #[error("corrupt event log {path}: {msg}")]
    Corrupt { path: String, msg: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SessionError {
    /// Stable machine-readable code for the HTTP layer.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::NotFound(_) => "not_found",
            SessionError::Closed(_) => "session_closed",
            SessionError::Invalid(_) => "invalid_request",
            SessionError::NoTruth(_) => "no_ground_truth",
            SessionError::Corrupt { .. } | SessionError::Jsonl(_) | SessionError::Io { .. } => "storage_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    InitialPrediction,
    UserFeedback,
    RefinedPrediction,
}

impl TurnKind {
    pub fn is_model(self) -> bool {
        self != TurnKind::UserFeedback
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Correction,
    Clue,
    Question,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub kind: FeedbackKind,
    pub text: String,
    /// Answer to a `question`, giving the question-and-answer framing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl Feedback {
    pub fn new(kind: FeedbackKind, text: impl Into<String>) -> Self {
        Feedback {
            kind,
            text: text.into(),
            answer: None,
        }
    }

    pub fn question_answer(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Feedback {
            kind: FeedbackKind::Question,
            text: question.into(),
            answer: Some(answer.into()),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.text.trim().is_empty() {
            return Err(SessionError::Invalid("feedback text is empty".into()));
        }
        if self.answer.as_deref().is_some_and(|a| a.trim().is_empty()) {
            return Err(SessionError::Invalid("feedback answer is empty".into()));
        }
        if self.answer.is_some() && self.kind != FeedbackKind::Question {
            return Err(SessionError::Invalid("only question feedback takes an answer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub index: usize,
    pub kind: TurnKind,
    /// Model reply, or the framed feedback text for user turns.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
    /// Backend failure for a model turn that produced no reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SessionTurn {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Truth>,
    pub backend_id: String,
    pub template_set: String,
    pub clue_template: bool,
    /// The opening request sent with the image.
    pub prompt: String,
    pub turns: Vec<SessionTurn>,
    pub status: SessionStatus,
}

impl Session {
    pub fn last_turn(&self) -> Option<&SessionTurn> {
        self.turns.last()
    }

    /// Model and user turns alternate, starting with a model turn.
    pub fn alternates(&self) -> bool {
        self.turns
            .iter()
            .enumerate()
            .all(|(i, t)| t.index == i && t.kind.is_model() == (i % 2 == 0) && (i == 0) == (t.kind == TurnKind::InitialPrediction))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Opened {
        session_id: String,
        image: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truth: Option<Truth>,
        backend_id: String,
        template_set: String,
        clue_template: bool,
        prompt: String,
    },
    TurnAppended { turn: SessionTurn },
    /// A retried model turn replacing a failed one at the same index.
    TurnReplaced { turn: SessionTurn },
    Closed,
}

/// Applies one event to the folded state.
pub fn apply(state: Option<Session>, event: &Event) -> Result<Session, String> {
    match (state, event) {
        (
            None,
            Event::Opened {
                session_id,
                image,
                truth,
                backend_id,
                template_set,
                clue_template,
                prompt,
            },
        ) => Ok(Session {
            session_id: session_id.clone(),
            image: image.clone(),
            truth: truth.clone(),
            backend_id: backend_id.clone(),
            template_set: template_set.clone(),
            clue_template: *clue_template,
            prompt: prompt.clone(),
            turns: Vec::new(),
            status: SessionStatus::Open,
        }),
        (None, _) => Err("log does not start with an opened event".into()),
        (Some(_), Event::Opened { .. }) => Err("second opened event".into()),
        (Some(s), _) if s.status == SessionStatus::Closed => Err("event after close".into()),
        (Some(mut s), Event::TurnAppended { turn }) => {
            if turn.index != s.turns.len() {
                return Err(format!("turn index {} out of sequence", turn.index));
            }
            s.turns.push(turn.clone());
            if !s.alternates() {
                return Err(format!("turn {} breaks alternation", turn.index));
            }
            Ok(s)
        }
        (Some(mut s), Event::TurnReplaced { turn }) => {
            let last = s.turns.last().ok_or("replace with no turns")?;
            if turn.index + 1 != s.turns.len() || !last.failed() || last.kind != turn.kind {
                return Err(format!("turn {} cannot be replaced", turn.index));
            }
            *s.turns.last_mut().unwrap() = turn.clone();
            Ok(s)
        }
        (Some(mut s), Event::Closed) => {
            s.status = SessionStatus::Closed;
            Ok(s)
        }
    }
}

/// Folds a complete event log into session state.
pub fn replay(events: &[Event]) -> Result<Session, String> {
    let mut state = None;
    for (i, e) in events.iter().enumerate() {
        state = Some(apply(state, e).map_err(|m| format!("event {}: {m}", i + 1))?);
    }
    state.ok_or_else(|| "empty event log".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub turn_index: usize,
    pub valid: bool,
    pub country_correct: bool,
    pub region_correct: bool,
    pub city_correct: bool,
    pub distance: Option<DistanceKm>,
    pub geoscore: Option<f64>,
}

/// Per-model-turn correctness and distance against the bound truth.
pub fn score_session(session: &Session, matcher: &NameMatcher) -> Result<Vec<TrajectoryPoint>, SessionError> {
    let truth = session
        .truth
        .as_ref()
        .ok_or_else(|| SessionError::NoTruth(session.session_id.clone()))?;
    Ok(session
        .turns
        .iter()
        .filter(|t| t.kind.is_model())
        .map(|t| {
            let fallback = Prediction::invalid("");
            let pred = t.prediction.as_ref().unwrap_or(&fallback);
            let admin = score_admin_with(matcher, pred, &truth.labels, true);
            let (distance, geoscore) = match truth.coord {
                Some(c) => {
                    let d = score_distance(pred, c);
                    (d.distance, d.geoscore)
                }
                None => (None, None),
            };
            TrajectoryPoint {
                turn_index: t.index,
                valid: pred.valid,
                country_correct: admin.country,
                region_correct: admin.region,
                city_correct: admin.city,
                distance,
                geoscore,
            }
        })
        .collect())
}
