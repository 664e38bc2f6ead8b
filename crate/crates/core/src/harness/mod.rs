//! Evaluation runs in direct (DIRE) and hierarchical (HIER) mode.

mod gazetteer;
pub mod prompt;

pub use gazetteer::Gazetteer;
pub use prompt::{build_prompt, build_stage_prompt, TemplateSet};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::geo::GeoCoordinate;
use crate::jsonl::{self, JsonlError};
use crate::metrics::{self, score_sample, EvalReport, ManifestRef, MetricsError, NameMatcher, Prediction, SampleScore};
use crate::model::audit::{audit_turns, AuditEntry};
use crate::model::{complete_with_retry, ChatBackend, ChatTurn, CompletionRequest, GenerationParams, RetryPolicy};
use crate::parser::{parse_prediction, PARSER_VERSION};
use crate::sample::Sample;
use crate::seed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Dire,
    Hier,
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dire" => Ok(EvalMode::Dire),
            "hier" => Ok(EvalMode::Hier),
            other => Err(format!("unknown evaluation mode {other:?} (expected dire or hier)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Direct,
    PlusQ,
    PlusQa,
}

impl std::str::FromStr for PromptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(PromptMode::Direct),
            "plus_q" | "+q" | "q" => Ok(PromptMode::PlusQ),
            "plus_qa" | "+qa" | "qa" => Ok(PromptMode::PlusQa),
            other => Err(format!("unknown prompt mode {other:?} (expected direct, plus_q or plus_qa)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Country,
    Region,
    City,
}

impl Level {
    pub fn key(self) -> &'static str {
        match self {
            Level::Country => "country",
            Level::Region => "region",
            Level::City => "city",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: EvalMode,
    pub prompt_mode: PromptMode,
    pub template_set: String,
    pub backend_id: String,
    pub seed: u64,
    pub parallelism: usize,
    /// Gate region/city on country in DIRE scoring. HIER is always gated.
    pub gated: bool,
    pub params: GenerationParams,
    pub retry: RetryPolicy,
}

impl RunConfig {
    pub fn new(mode: EvalMode, backend_id: impl Into<String>, seed: u64) -> Self {
        RunConfig {
            mode,
            prompt_mode: PromptMode::Direct,
            template_set: "default@1".into(),
            backend_id: backend_id.into(),
            seed,
            parallelism: 0,
            gated: true,
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
        }
    }

    /// Hash of the fields that determine run output. Parallelism and the
    /// retry schedule are excluded.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            mode: EvalMode,
            prompt_mode: PromptMode,
            template_set: &'a str,
            backend_id: &'a str,
            seed: u64,
            gated: bool,
            params: &'a GenerationParams,
            parser: &'a str,
        }
        seed::json_hash(&Key {
            mode: self.mode,
            prompt_mode: self.prompt_mode,
            template_set: &self.template_set,
            backend_id: &self.backend_id,
            seed: self.seed,
            gated: self.gated,
            params: &self.params,
            parser: PARSER_VERSION,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub n_candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched: Option<String>,
    pub correct: bool,
}

/// Everything exchanged with the backend for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub sample_id: String,
    pub mode: EvalMode,
    pub calls: Vec<AuditEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageRecord>,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub parser_version: String,
    pub template_set: String,
    pub config_hash: String,
    pub seed: u64,
    pub backend_id: String,
    pub benchmark_hash: String,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub config: RunConfig,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub config: RunConfig,
    pub manifest: RunManifest,
    pub transcripts: Vec<Transcript>,
    pub scores: Vec<SampleScore>,
    pub report: EvalReport,
}

pub struct Evaluator<'a> {
    pub backend: &'a dyn ChatBackend,
    pub templates: &'a TemplateSet,
    pub matcher: &'a NameMatcher,
    /// Directory that relative sample image paths are resolved against.
    pub image_root: Option<PathBuf>,
}

impl<'a> Evaluator<'a> {
    pub fn new(backend: &'a dyn ChatBackend, templates: &'a TemplateSet, matcher: &'a NameMatcher) -> Self {
        Evaluator {
            backend,
            templates,
            matcher,
            image_root: None,
        }
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    fn resolve_images(&self, turns: &mut [ChatTurn]) {
        let Some(root) = &self.image_root else { return };
        for t in turns {
            if let Some(img) = &t.image {
                if Path::new(img).is_relative() {
                    t.image = Some(root.join(img).display().to_string());
                }
            }
        }
    }

    fn call(&self, stage: &str, history: &[ChatTurn], sample: &Sample, cfg: &RunConfig) -> (Result<String, String>, AuditEntry) {
        let truth = sample.truth();
        let req = CompletionRequest::new(history, &cfg.params).bound(Some(&truth));
        let (res, attempts) = complete_with_retry(self.backend, &req, &cfg.retry);
        let entry = AuditEntry {
            backend_id: self.backend.id().to_string(),
            stage: stage.to_string(),
            request: audit_turns(history),
            params: cfg.params.clone(),
            attempts,
            response: res.as_ref().ok().cloned(),
            error: res.as_ref().err().map(|e| e.to_string()),
        };
        (res.map_err(|e| e.category().to_string()), entry)
    }

    fn check(&self, benchmark: &[Sample], cfg: &RunConfig) -> Result<(), HarnessError> {
        if benchmark.is_empty() {
            return Err(HarnessError::Config("benchmark is empty".into()));
        }
        for s in benchmark {
            build_prompt(self.templates, s, cfg.prompt_mode, cfg.seed)?;
        }
        Ok(())
    }

    pub fn dire_sample(&self, sample: &Sample, cfg: &RunConfig) -> (Transcript, SampleScore) {
        let mut turns = build_prompt(self.templates, sample, cfg.prompt_mode, cfg.seed).expect("validated before the run");
        self.resolve_images(&mut turns);
        let (res, entry) = self.call("dire", &turns, sample, cfg);
        let prediction = match &res {
            Ok(text) => parse_prediction(text),
            Err(_) => Prediction::invalid(""),
        };
        let mut score = score_sample(self.matcher, &sample.sample_id, &prediction, &sample.labels, sample.coord, cfg.gated);
        score.backend_error = res.err();
        let t = Transcript {
            sample_id: sample.sample_id.clone(),
            mode: EvalMode::Dire,
            calls: vec![entry],
            stages: Vec::new(),
            prediction,
        };
        (t, score)
    }

    pub fn hier_sample(&self, sample: &Sample, gazetteer: &Gazetteer, cfg: &RunConfig) -> (Transcript, SampleScore) {
        let mut history: Vec<ChatTurn> = Vec::new();
        let mut calls = Vec::new();
        let mut stages = Vec::new();
        let mut prediction = Prediction::invalid("");
        let mut coord: Option<GeoCoordinate> = None;
        let mut backend_error = None;
        let mut chosen_country: Option<String> = None;
        let mut chosen_region: Option<String> = None;
        let mut raws = Vec::new();

        for level in [Level::Country, Level::Region, Level::City] {
            let (parent, candidates) = match level {
                Level::Country => (None, gazetteer.countries()),
                Level::Region => {
                    let c = chosen_country.clone().expect("descended past country");
                    let regions = gazetteer.regions(&c);
                    (Some(c), regions)
                }
                Level::City => {
                    let c = chosen_country.as_deref().expect("descended past country");
                    let r = chosen_region.clone().expect("descended past region");
                    (Some(r.clone()), gazetteer.cities(c, &r))
                }
            };
            if candidates.is_empty() {
                break;
            }
            let mut turns = build_stage_prompt(
                self.templates,
                sample,
                cfg.prompt_mode,
                level,
                parent.as_deref(),
                &candidates,
                level == Level::Country,
            )
            .expect("validated before the run");
            self.resolve_images(&mut turns);
            history.extend(turns);
            let (res, entry) = self.call(level.key(), &history, sample, cfg);
            calls.push(entry);
            let reply = match res {
                Ok(r) => r,
                Err(cat) => {
                    backend_error = Some(cat);
                    break;
                }
            };
            history.push(ChatTurn::assistant(reply.clone()));
            let parsed = parse_prediction(&reply);
            if parsed.coord.is_some() {
                coord = parsed.coord;
            }
            let answer = choice_text(&parsed, level, &reply);
            let matched = answer.as_deref().and_then(|a| match_candidate(self.matcher, a, &candidates));
            let truth_name = match level {
                Level::Country => &sample.labels.country,
                Level::Region => &sample.labels.region,
                Level::City => &sample.labels.city,
            };
            let correct = matched.as_deref().is_some_and(|m| self.matcher.same(m, truth_name));
            raws.push(reply);
            match level {
                Level::Country => {
                    prediction.valid = matched.is_some();
                    prediction.country = matched.clone();
                }
                Level::Region => prediction.region = matched.clone(),
                Level::City => prediction.city = matched.clone(),
            }
            stages.push(StageRecord {
                level,
                parent,
                n_candidates: candidates.len(),
                answer,
                matched: matched.clone(),
                correct,
            });
            if !correct {
                break;
            }
            match level {
                Level::Country => chosen_country = matched,
                Level::Region => chosen_region = matched,
                Level::City => {}
            }
        }
        prediction.coord = coord;
        prediction.raw = raws.join("\n");
        let mut score = score_sample(self.matcher, &sample.sample_id, &prediction, &sample.labels, sample.coord, true);
        // Stage outcomes are authoritative: an unchosen level is incorrect.
        score.country_correct = stages.first().is_some_and(|s| s.correct);
        score.region_correct = score.country_correct && stages.get(1).is_some_and(|s| s.correct);
        score.city_correct = score.region_correct && stages.get(2).is_some_and(|s| s.correct);
        score.backend_error = backend_error;
        let t = Transcript {
            sample_id: sample.sample_id.clone(),
            mode: EvalMode::Hier,
            calls,
            stages,
            prediction,
        };
        (t, score)
    }

    fn finish(&self, benchmark: &[Sample], cfg: &RunConfig, outcomes: Vec<(Transcript, SampleScore)>) -> Result<Run, HarnessError> {
        let (transcripts, scores): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
        let manifest = RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            parser_version: PARSER_VERSION.to_string(),
            template_set: self.templates.tag(),
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            backend_id: cfg.backend_id.clone(),
            benchmark_hash: seed::json_hash(&benchmark),
            n_samples: benchmark.len(),
        };
        let report = metrics::aggregate_scores(
            &scores,
            ManifestRef {
                config_hash: manifest.config_hash.clone(),
                seed: cfg.seed,
                backend_id: cfg.backend_id.clone(),
            },
        )?;
        Ok(Run {
            config: cfg.clone(),
            manifest,
            transcripts,
            scores,
            report,
        })
    }

    pub fn run_dire(&self, benchmark: &[Sample], cfg: &RunConfig) -> Result<Run, HarnessError> {
        self.check(benchmark, cfg)?;
        let outcomes = Exec::from_cap(cfg.parallelism).map(benchmark, |s| self.dire_sample(s, cfg));
        self.finish(benchmark, cfg, outcomes)
    }

    pub fn run_hier(&self, benchmark: &[Sample], gazetteer: &Gazetteer, cfg: &RunConfig) -> Result<Run, HarnessError> {
        self.check(benchmark, cfg)?;
        gazetteer.check_covers(benchmark, self.matcher)?;
        let outcomes = Exec::from_cap(cfg.parallelism).map(benchmark, |s| self.hier_sample(s, gazetteer, cfg));
        self.finish(benchmark, cfg, outcomes)
    }

    pub fn run(&self, benchmark: &[Sample], gazetteer: Option<&Gazetteer>, cfg: &RunConfig) -> Result<Run, HarnessError> {
        match cfg.mode {
            EvalMode::Dire => self.run_dire(benchmark, cfg),
            EvalMode::Hier => match gazetteer {
                Some(g) => self.run_hier(benchmark, g, cfg),
                None => self.run_hier(benchmark, &Gazetteer::from_samples(benchmark), cfg),
            },
        }
    }
}

/// The name a stage reply chose: the level's JSON key when present,
/// otherwise the bare reply with quotes, markdown emphasis, a leading
/// list number and a trailing period stripped.
pub fn choice_text(parsed: &Prediction, level: Level, raw: &str) -> Option<String> {
    let field = match level {
        Level::Country => &parsed.country,
        Level::Region => &parsed.region,
        Level::City => &parsed.city,
    };
    if let Some(f) = field {
        return Some(f.clone());
    }
    if parsed.valid {
        return None;
    }
    let mut t = raw.trim();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && matches!(t.as_bytes().get(digits), Some(b'.') | Some(b')')) {
        t = t[digits + 1..].trim_start();
    }
    let t = t
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*'))
        .trim_end_matches('.')
        .trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// The single candidate equal to `answer` after normalization.
pub fn match_candidate(matcher: &NameMatcher, answer: &str, candidates: &[String]) -> Option<String> {
    let mut hits = candidates.iter().filter(|c| matcher.same(c, answer));
    let first = hits.next()?;
    if hits.next().is_some() {
        return None;
    }
    Some(first.clone())
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `run.json`, `raw.jsonl`, `scores.jsonl`, `report.json` and
/// `report.csv` into `dir`.
pub fn write_run(dir: &Path, run: &Run) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let run_file = RunFile {
        config: run.config.clone(),
        manifest: run.manifest.clone(),
    };
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(&run_file).expect("serializable") + "\n").map_err(|e| io_err(&p, e))?;
    jsonl::write(&dir.join("raw.jsonl"), &run.transcripts)?;
    jsonl::write(&dir.join("scores.jsonl"), &run.scores)?;
    let p = dir.join("report.json");
    std::fs::write(&p, serde_json::to_string_pretty(&run.report).expect("serializable") + "\n").map_err(|e| io_err(&p, e))?;
    let p = dir.join("report.csv");
    let f = std::fs::File::create(&p).map_err(|e| io_err(&p, e))?;
    metrics::write_reports_csv(f, std::slice::from_ref(&run.report))?;
    Ok(())
}

/// Re-aggregates a run directory from its `scores.jsonl` and `run.json`.
pub fn report_from_dir(dir: &Path) -> Result<EvalReport, HarnessError> {
    let p = dir.join("run.json");
    let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
    let run_file: RunFile = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
    let scores: Vec<SampleScore> = jsonl::read(&dir.join("scores.jsonl"))?;
    Ok(metrics::aggregate_scores(
        &scores,
        ManifestRef {
            config_hash: run_file.manifest.config_hash,
            seed: run_file.manifest.seed,
            backend_id: run_file.manifest.backend_id,
        },
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse() {
        assert_eq!("DIRE".parse::<EvalMode>().unwrap(), EvalMode::Dire);
        assert!("flat".parse::<EvalMode>().is_err());
        assert_eq!("+QA".parse::<PromptMode>().unwrap(), PromptMode::PlusQa);
    }

    #[test]
    fn choice_text_rules() {
        let p = parse_prediction("Chile.");
        assert_eq!(choice_text(&p, Level::Country, "Chile."), Some("Chile".into()));
        assert_eq!(choice_text(&p, Level::Country, "2. **Peru**"), Some("Peru".into()));
        let raw = r#"{"country": "Peru", "lat": 1, "lon": 2}"#;
        let p = parse_prediction(raw);
        assert_eq!(choice_text(&p, Level::Country, raw), Some("Peru".into()));
        assert_eq!(choice_text(&p, Level::Region, raw), None);
    }

    #[test]
    fn candidate_matching_is_exact_after_normalization() {
        let m = NameMatcher::default();
        let c = vec!["Guinea".to_string(), "Guinea-Bissau".to_string(), "Papua New Guinea".to_string()];
        assert_eq!(match_candidate(&m, " guinea ", &c), Some("Guinea".into()));
        assert_eq!(match_candidate(&m, "New Guinea", &c), None);
    }

    #[test]
    fn config_hash_ignores_parallelism() {
        let a = RunConfig::new(EvalMode::Dire, "oracle", 1);
        let mut b = a.clone();
        b.parallelism = 8;
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 2;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
