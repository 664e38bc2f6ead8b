//! Prompt templates and prompt construction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Level, PromptMode};
use crate::model::ChatTurn;
use crate::sample::Sample;
use crate::seed;

/// Candidate lists longer than this are split into numbered segments.
pub const CHUNK_SIZE: usize = 150;

const DEFAULT_TEMPLATES: &str = include_str!("../../templates/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierTemplates {
    pub country: String,
    pub region: String,
    pub city: String,
}

/// Versioned prompt data. Placeholders: `{parent}` (chosen parent name),
/// `{part}`/`{parts}` (segment numbering) and `{level}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub id: String,
    pub version: String,
    pub direct: Vec<String>,
    pub clue: Vec<String>,
    pub answer_format: String,
    pub clue_format: String,
    pub location_request: String,
    pub hier: HierTemplates,
    pub candidates_header: String,
    pub chunk_header: String,
    pub final_instruction: String,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATES).expect("built-in template set parses")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let set: TemplateSet =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if set.direct.is_empty() || set.clue.is_empty() {
            return Err(HarnessError::Config(format!("{}: template lists must be non-empty", path.display())));
        }
        Ok(set)
    }

    /// Resolves `"default"` to the built-in set, anything else as a path.
    pub fn resolve(id_or_path: &str) -> Result<Self, HarnessError> {
        if id_or_path == "default" {
            Ok(Self::builtin())
        } else {
            Self::load(Path::new(id_or_path))
        }
    }

    pub fn tag(&self) -> String {
        format!("{}@{}", self.id, self.version)
    }

    fn pick<'a>(&self, list: &'a [String], seed: u64, sample_id: &str) -> &'a str {
        let i = seed::derive(seed, &format!("template/{sample_id}")) % list.len() as u64;
        &list[i as usize]
    }

    /// Direct-inquiry request text for a sample, chosen by `(seed, sample_id)`.
    pub fn direct_request(&self, seed: u64, sample_id: &str) -> String {
        format!("{}\n{}", self.pick(&self.direct, seed, sample_id), self.answer_format)
    }

    pub fn clue_request(&self, seed: u64, sample_id: &str) -> String {
        format!("{}\n{}", self.pick(&self.clue, seed, sample_id), self.clue_format)
    }

    fn hier_question(&self, level: Level, parent: Option<&str>) -> String {
        let t = match level {
            Level::Country => &self.hier.country,
            Level::Region => &self.hier.region,
            Level::City => &self.hier.city,
        };
        t.replace("{parent}", parent.unwrap_or(""))
    }
}

/// Turns that precede the location request for the given prompt mode. The
/// image rides on the first returned turn.
fn mode_prefix(sample: &Sample, mode: PromptMode, request: String) -> Result<Vec<ChatTurn>, HarnessError> {
    let image = sample.image_path.clone();
    let question = || {
        sample
            .guiding_question
            .clone()
            .ok_or_else(|| HarnessError::Config(format!("sample {} has no guiding question", sample.sample_id)))
    };
    Ok(match mode {
        PromptMode::Direct => vec![ChatTurn::user_with_image(request, image)],
        PromptMode::PlusQ => vec![ChatTurn::user_with_image(format!("{}\n\n{request}", question()?), image)],
        PromptMode::PlusQa => {
            let answer = sample
                .guiding_answer
                .clone()
                .ok_or_else(|| HarnessError::Config(format!("sample {} has no guiding answer", sample.sample_id)))?;
            vec![
                ChatTurn::user_with_image(question()?, image),
                ChatTurn::assistant(answer),
                ChatTurn::user(request),
            ]
        }
    })
}

/// Full DIRE conversation for a sample.
pub fn build_prompt(
    templates: &TemplateSet,
    sample: &Sample,
    mode: PromptMode,
    seed: u64,
) -> Result<Vec<ChatTurn>, HarnessError> {
    mode_prefix(sample, mode, templates.direct_request(seed, &sample.sample_id))
}

/// Turns for one HIER stage, appended to the running conversation.
/// `first_stage` controls whether the prompt-mode prefix (guiding Q/QA)
/// is emitted. Every stage carries the image on its first turn.
pub fn build_stage_prompt(
    templates: &TemplateSet,
    sample: &Sample,
    mode: PromptMode,
    level: Level,
    parent: Option<&str>,
    candidates: &[String],
    first_stage: bool,
) -> Result<Vec<ChatTurn>, HarnessError> {
    let question = templates.hier_question(level, parent);
    let final_instruction = templates.final_instruction.replace("{level}", level.key());
    let numbered = |start: usize, names: &[String]| -> String {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{}. {n}", start + i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    };

    let mut segments: Vec<String> = if candidates.len() <= CHUNK_SIZE {
        vec![format!(
            "{question}\n{}\n{}\n{final_instruction}",
            templates.candidates_header,
            numbered(0, candidates)
        )]
    } else {
        let chunks: Vec<&[String]> = candidates.chunks(CHUNK_SIZE).collect();
        let parts = chunks.len();
        chunks
            .iter()
            .enumerate()
            .map(|(i, chunk)| {
                let header = templates
                    .chunk_header
                    .replace("{part}", &(i + 1).to_string())
                    .replace("{parts}", &parts.to_string());
                let body = numbered(i * CHUNK_SIZE, chunk);
                match i {
                    0 => format!("{question}\n{header}\n{body}"),
                    _ if i + 1 == parts => format!("{header}\n{body}\n{final_instruction}"),
                    _ => format!("{header}\n{body}"),
                }
            })
            .collect()
    };

    let first = segments.remove(0);
    let mut turns = if first_stage {
        mode_prefix(sample, mode, first)?
    } else {
        vec![ChatTurn::user_with_image(first, sample.image_path.clone())]
    };
    turns.extend(segments.into_iter().map(ChatTurn::user));
    Ok(turns)
}
