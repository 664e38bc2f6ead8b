use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use super::{
    apply, replay, score_session, Event, Feedback, FeedbackKind, Session, SessionError, SessionStatus, SessionTurn,
    TrajectoryPoint, TurnKind, HISTORY_WINDOW,
};
use crate::harness::TemplateSet;
use crate::jsonl;
use crate::metrics::NameMatcher;
use crate::model::{complete_with_retry, ChatBackend, ChatTurn, CompletionRequest, GenerationParams, RetryPolicy};
use crate::parser::{parse_prediction, prose_outside_json};
use crate::sample::Truth;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Event logs live here as `<session_id>.jsonl`. `None` keeps sessions in memory.
    pub sessions_dir: Option<PathBuf>,
    pub templates: TemplateSet,
    pub window: usize,
    pub params: GenerationParams,
    pub retry: RetryPolicy,
    /// Picks the opening template per session.
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            sessions_dir: None,
            templates: TemplateSet::builtin(),
            window: HISTORY_WINDOW,
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
            seed: 0,
        }
    }
}

struct Slot {
    /// Serializes writers of one session.
    writer: Mutex<Vec<Event>>,
    snapshot: RwLock<Arc<Session>>,
}

pub struct SessionEngine {
    backend: Arc<dyn ChatBackend>,
    cfg: EngineConfig,
    matcher: NameMatcher,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

const NO_ANSWER: &str = "(no answer)";

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn io_err(path: &Path, source: std::io::Error) -> SessionError {
    SessionError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl SessionEngine {
    pub fn new(backend: Arc<dyn ChatBackend>, cfg: EngineConfig) -> Result<Self, SessionError> {
        if let Some(dir) = &cfg.sessions_dir {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let engine = SessionEngine {
            backend,
            cfg,
            matcher: NameMatcher::default(),
            sessions: RwLock::new(HashMap::new()),
        };
        engine.load_existing()?;
        Ok(engine)
    }

    pub fn with_matcher(mut self, matcher: NameMatcher) -> Self {
        self.matcher = matcher;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.cfg.sessions_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn load_existing(&self) -> Result<(), SessionError> {
        let Some(dir) = &self.cfg.sessions_dir else { return Ok(()) };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut map = self.sessions.write().unwrap();
        for p in paths {
            let events: Vec<Event> = jsonl::read(&p)?;
            let s = replay(&events).map_err(|msg| SessionError::Corrupt {
                path: p.display().to_string(),
                msg,
            })?;
            map.insert(
                s.session_id.clone(),
                Arc::new(Slot {
                    writer: Mutex::new(events),
                    snapshot: RwLock::new(Arc::new(s)),
                }),
            );
        }
        Ok(())
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, SessionError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    /// Persists then applies an event. The log write comes first so memory
    /// never holds state the log lacks.
    fn commit(&self, slot: &Slot, events: &mut Vec<Event>, event: Event) -> Result<Arc<Session>, SessionError> {
        let current = (*slot.snapshot.read().unwrap()).clone();
        let next = apply(Some((*current).clone()), &event).map_err(SessionError::Invalid)?;
        if let Some(p) = self.log_path(&next.session_id) {
            jsonl::append(&p, &event)?;
        }
        events.push(event);
        let next = Arc::new(next);
        *slot.snapshot.write().unwrap() = next.clone();
        Ok(next)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        Ok(self.slot(id)?.snapshot.read().unwrap().clone())
    }

    pub fn ids(&self) -> Vec<String> {
        let mut v: Vec<String> = self.sessions.read().unwrap().keys().cloned().collect();
        v.sort();
        v
    }

    pub fn events(&self, id: &str) -> Result<Vec<Event>, SessionError> {
        Ok(self.slot(id)?.writer.lock().unwrap().clone())
    }

    pub fn open(&self, image: &str, truth: Option<Truth>, clue_template: bool) -> Result<Arc<Session>, SessionError> {
        self.open_with_id(&uuid::Uuid::new_v4().to_string(), image, truth, clue_template)
    }

    /// Opens a session and requests the initial prediction. A backend
    /// failure still opens the session, with a failed turn to retry.
    pub fn open_with_id(
        &self,
        id: &str,
        image: &str,
        truth: Option<Truth>,
        clue_template: bool,
    ) -> Result<Arc<Session>, SessionError> {
        if !valid_id(id) {
            return Err(SessionError::Invalid(format!("bad session id {id:?}")));
        }
        std::fs::File::open(image).map_err(|e| SessionError::Invalid(format!("image {image:?} is not readable: {e}")))?;
        let t = &self.cfg.templates;
        let prompt = if clue_template {
            t.clue_request(self.cfg.seed, id)
        } else {
            t.direct_request(self.cfg.seed, id)
        };
        let opened = Event::Opened {
            session_id: id.to_string(),
            image: image.to_string(),
            truth,
            backend_id: self.backend.id().to_string(),
            template_set: t.tag(),
            clue_template,
            prompt,
        };
        let session = apply(None, &opened).map_err(SessionError::Invalid)?;
        let slot = Arc::new(Slot {
            writer: Mutex::new(Vec::new()),
            snapshot: RwLock::new(Arc::new(session)),
        });
        {
            let mut map = self.sessions.write().unwrap();
            if map.contains_key(id) {
                return Err(SessionError::Invalid(format!("session {id} already exists")));
            }
            map.insert(id.to_string(), slot.clone());
        }
        let mut events = slot.writer.lock().unwrap();
        if let Some(p) = self.log_path(id) {
            if p.exists() {
                return Err(SessionError::Invalid(format!("session log {} already exists", p.display())));
            }
            jsonl::append(&p, &opened)?;
        }
        events.push(opened);
        let session = slot.snapshot.read().unwrap().clone();
        let turn = self.model_turn(&session, 0, TurnKind::InitialPrediction);
        self.commit(&slot, &mut events, Event::TurnAppended { turn })
    }

    /// Appends the user's feedback and the model's refined prediction.
    pub fn submit_feedback(&self, id: &str, feedback: Feedback) -> Result<Arc<Session>, SessionError> {
        feedback.validate()?;
        let slot = self.slot(id)?;
        let mut events = slot.writer.lock().unwrap();
        let session = slot.snapshot.read().unwrap().clone();
        if session.status == SessionStatus::Closed {
            return Err(SessionError::Closed(id.to_string()));
        }
        if !session.last_turn().is_some_and(|t| t.kind.is_model()) {
            return Err(SessionError::Invalid("the last turn is not a model turn".into()));
        }
        let index = session.turns.len();
        let user = SessionTurn {
            index,
            kind: TurnKind::UserFeedback,
            text: self.frame(&feedback),
            prediction: None,
            feedback: Some(feedback),
            error: None,
        };
        let session = self.commit(&slot, &mut events, Event::TurnAppended { turn: user })?;
        let refined = self.model_turn(&session, index + 1, TurnKind::RefinedPrediction);
        self.commit(&slot, &mut events, Event::TurnAppended { turn: refined })
    }

    /// Re-requests a failed last model turn.
    pub fn retry(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        let slot = self.slot(id)?;
        let mut events = slot.writer.lock().unwrap();
        let session = slot.snapshot.read().unwrap().clone();
        if session.status == SessionStatus::Closed {
            return Err(SessionError::Closed(id.to_string()));
        }
        let last = session
            .last_turn()
            .filter(|t| t.kind.is_model() && t.failed())
            .ok_or_else(|| SessionError::Invalid("the last turn did not fail".into()))?;
        let mut upto = (*session).clone();
        upto.turns.pop();
        let turn = self.model_turn(&upto, last.index, last.kind);
        self.commit(&slot, &mut events, Event::TurnReplaced { turn })
    }

    pub fn close(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        let slot = self.slot(id)?;
        let mut events = slot.writer.lock().unwrap();
        if slot.snapshot.read().unwrap().status == SessionStatus::Closed {
            return Err(SessionError::Closed(id.to_string()));
        }
        self.commit(&slot, &mut events, Event::Closed)
    }

    pub fn score(&self, id: &str) -> Result<Vec<TrajectoryPoint>, SessionError> {
        score_session(&*self.get(id)?, &self.matcher)
    }

    fn frame(&self, f: &Feedback) -> String {
        let text = f.text.trim();
        match (f.kind, &f.answer) {
            (FeedbackKind::Correction, _) => format!("[Your prediction is incorrect] {text}"),
            (FeedbackKind::Clue, _) => text.to_string(),
            (FeedbackKind::Question, None) => format!("{text}\n\n{}", self.cfg.templates.location_request),
            (FeedbackKind::Question, Some(a)) => {
                format!("Question: {text}\nAnswer: {}\n\n{}", a.trim(), self.cfg.templates.location_request)
            }
        }
    }

    fn model_turn(&self, session: &Session, index: usize, kind: TurnKind) -> SessionTurn {
        let history = conversation(session, self.cfg.window);
        let req = CompletionRequest::new(&history, &self.cfg.params).bound(session.truth.as_ref());
        let (res, _) = complete_with_retry(self.backend.as_ref(), &req, &self.cfg.retry);
        match res {
            Ok(reply) => {
                let mut pred = parse_prediction(&reply);
                if session.clue_template && pred.clues.is_none() {
                    pred.clues = prose_outside_json(&reply);
                }
                SessionTurn {
                    index,
                    kind,
                    text: reply,
                    prediction: Some(pred),
                    feedback: None,
                    error: None,
                }
            }
            Err(e) => SessionTurn {
                index,
                kind,
                text: String::new(),
                prediction: Some(crate::metrics::Prediction::invalid("")),
                feedback: None,
                error: Some(e.to_string()),
            },
        }
    }
}

fn summary_line(pairs: &[SessionTurn]) -> String {
    let items: Vec<String> = pairs
        .chunks(2)
        .enumerate()
        .map(|(i, p)| {
            let fb: String = p[0].text.chars().take(120).collect();
            let answer = p
                .get(1)
                .and_then(|m| m.prediction.as_ref())
                .and_then(|pr| pr.country.clone())
                .unwrap_or_else(|| NO_ANSWER.to_string());
            format!("{}) {} -> {answer}", i + 1, fb.replace('\n', " "))
        })
        .collect();
    format!("Summary of earlier feedback: {}", items.join("; "))
}

/// Chat history for the next model turn: the opening request with the
/// image, then the session turns. Beyond `window` turns the oldest
/// feedback/prediction pairs after the initial prediction are dropped and
/// summarized at the head of the first kept feedback turn.
pub fn conversation(session: &Session, window: usize) -> Vec<ChatTurn> {
    let mut out = vec![ChatTurn::user_with_image(session.prompt.clone(), session.image.clone())];
    let as_chat = |t: &SessionTurn| {
        if t.kind.is_model() {
            ChatTurn::assistant(if t.failed() { NO_ANSWER.to_string() } else { t.text.clone() })
        } else {
            ChatTurn::user(t.text.clone())
        }
    };
    let turns = &session.turns;
    if turns.len() + 1 <= window.max(4) {
        out.extend(turns.iter().map(as_chat));
        return out;
    }
    // Keep prompt + initial prediction + a tail starting on a user turn.
    let mut start = (turns.len() + 2).saturating_sub(window.max(4)).max(1);
    if start % 2 == 0 {
        start += 1;
    }
    out.push(as_chat(&turns[0]));
    let dropped = &turns[1..start];
    for (k, t) in turns[start..].iter().enumerate() {
        let mut c = as_chat(t);
        if k == 0 && !dropped.is_empty() {
            c.text = format!("{}\n\n{}", summary_line(dropped), c.text);
        }
        out.push(c);
    }
    out
}
