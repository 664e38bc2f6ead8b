//! Training-data construction: clue matching with human review, and
//! multi-round reasoning dialogs with a self-correction pass.

pub mod clues;
pub mod dialog;
pub mod pipeline;
pub mod store;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::JsonlError;
use crate::model::ChatTurn;

pub use clues::{build_repository, match_clues, parse_clue_reply, read_clue_entries, ClueEntry, ClueRecord, ClueRepository, ReviewStatus};
pub use dialog::{cot_deduction, cot_introspection, decision_criterion, segment_qa, DialogRecord, DialogStatus, QaPair};
pub use pipeline::{run_clues, run_dialogs, PipelineSummary};
pub use store::{QuarantineEntry, RecordStore};

pub const PIPELINE_VERSION: &str = "1";
/// Version of the Q/A segmentation grammar in [`segment_qa`].
pub const SEGMENTATION_VERSION: &str = "1.0";

/// Introspection distance trigger, kilometers. The comparison is strict.
pub const INTROSPECTION_THRESHOLD_KM: f64 = 25.0;

const DEFAULT_PROMPTS: &str = include_str!("../../templates/datagen.json");

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("review: {0}")]
    Review(String),
    #[error("{path}: {msg}")]
    Input { path: String, msg: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ParseFailure,
    Structure,
    Coordinate,
    QuestionDrift,
    Uncorrected,
    Backend,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::ParseFailure => "parse_failure",
            RejectReason::Structure => "structure",
            RejectReason::Coordinate => "coordinate",
            RejectReason::QuestionDrift => "question_drift",
            RejectReason::Uncorrected => "uncorrected",
            RejectReason::Backend => "backend",
        }
    }
}

/// A generation step that could not produce a valid record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: RejectReason,
    pub detail: String,
    /// Raw backend replies, one per attempt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<String>,
}

/// Prompt texts. `{(X, Y)}` in the introspection prompt receives the true
/// coordinate; `{country}` and `{clues}` fill the clue-matching prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenPrompts {
    pub id: String,
    pub version: String,
    pub deduction: String,
    pub introspection: String,
    pub clue_match: String,
}

impl DatagenPrompts {
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULT_PROMPTS).expect("built-in datagen prompts parse")
    }

    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatagenError::Input {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| DatagenError::Input {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn tag(&self) -> String {
        format!("{}@{}", self.id, self.version)
    }
}

pub(crate) fn resolve_image(root: Option<&Path>, image: &str) -> String {
    match root {
        Some(r) if Path::new(image).is_relative() => r.join(image).display().to_string(),
        _ => image.to_string(),
    }
}

/// Shared generation context.
pub struct Generator<'a> {
    pub backend: &'a dyn crate::model::ChatBackend,
    pub prompts: &'a DatagenPrompts,
    pub matcher: &'a crate::metrics::NameMatcher,
    pub image_root: Option<PathBuf>,
    pub params: crate::model::GenerationParams,
    pub retry: crate::model::RetryPolicy,
}

impl<'a> Generator<'a> {
    pub fn new(
        backend: &'a dyn crate::model::ChatBackend,
        prompts: &'a DatagenPrompts,
        matcher: &'a crate::metrics::NameMatcher,
    ) -> Self {
        Generator {
            backend,
            prompts,
            matcher,
            image_root: None,
            params: crate::model::GenerationParams::default(),
            retry: crate::model::RetryPolicy::default(),
        }
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub(crate) fn image_turn(&self, text: String, image: &str) -> ChatTurn {
        ChatTurn::user_with_image(text, resolve_image(self.image_root.as_deref(), image))
    }

    pub(crate) fn ask(&self, history: &[ChatTurn], truth: &crate::sample::Truth) -> Result<String, String> {
        let req = crate::model::CompletionRequest::new(history, &self.params).bound(Some(truth));
        crate::model::complete_with_retry(self.backend, &req, &self.retry)
            .0
            .map_err(|e| e.to_string())
    }
}
