//! Country-specific clue repository and image/clue matching.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{DatagenError, Generator, RejectReason, Rejection, PIPELINE_VERSION};
use crate::metrics::normalize_name;
use crate::parser::object_spans;
use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueEntry {
    #[serde(default)]
    pub country: String,
    #[serde(default)]
    pub clue_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

/// Reads clue entries from CSV (header `country,clue_text[,source_url]`)
/// or, for `.jsonl`/`.json` files, JSON lines.
pub fn read_clue_entries(path: &Path) -> Result<Vec<ClueEntry>, DatagenError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "jsonl" || ext == "json" {
        return Ok(crate::jsonl::read(path)?);
    }
    let input_err = |msg: String| DatagenError::Input {
        path: path.display().to_string(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec.map_err(|e: csv::Error| input_err(e.to_string()))?);
    }
    Ok(out)
}

/// Country name to its clue texts, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClueRepository {
    pub clues: BTreeMap<String, Vec<String>>,
}

impl ClueRepository {
    pub fn len(&self) -> usize {
        self.clues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clues.is_empty()
    }

    /// Clues of a country, matched on the normalized name.
    pub fn get(&self, country: &str) -> Option<(&str, &[String])> {
        let k = normalize_name(country);
        self.clues
            .iter()
            .find(|(c, _)| normalize_name(c) == k)
            .map(|(c, v)| (c.as_str(), v.as_slice()))
    }

    pub fn n_clues(&self) -> usize {
        self.clues.values().map(Vec::len).sum()
    }
}

/// Groups entries by country and drops exact duplicate texts. Entries with
/// an empty text, an empty country, or a country outside `known` (when
/// given) come back in the second list with a reason.
pub fn build_repository(
    entries: &[ClueEntry],
    known: Option<&BTreeSet<String>>,
) -> (ClueRepository, Vec<(ClueEntry, String)>) {
    let known: Option<BTreeSet<String>> = known.map(|k| k.iter().map(|c| normalize_name(c)).collect());
    let mut repo = ClueRepository::default();
    let mut canon: BTreeMap<String, String> = BTreeMap::new();
    let mut quarantined = Vec::new();
    for e in entries {
        let country = e.country.trim();
        let text = e.clue_text.trim();
        if country.is_empty() {
            quarantined.push((e.clone(), "empty country".to_string()));
            continue;
        }
        if text.is_empty() {
            quarantined.push((e.clone(), "empty clue text".to_string()));
            continue;
        }
        let key = normalize_name(country);
        if known.as_ref().is_some_and(|k| !k.contains(&key)) {
            quarantined.push((e.clone(), format!("unknown country {country:?}")));
            continue;
        }
        let name = canon.entry(key).or_insert_with(|| country.to_string()).clone();
        let list = repo.clues.entry(name).or_default();
        if !list.iter().any(|c| c == text) {
            list.push(text.to_string());
        }
    }
    (repo, quarantined)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ReviewStatus {
    Unreviewed,
    Approved,
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClueRecord {
    pub sample_id: String,
    pub image_path: String,
    pub country: String,
    /// 1-based indices into the country's clue list.
    pub clue_indices: Vec<usize>,
    pub clues: Vec<String>,
    pub rephrasing: String,
    pub status: ReviewStatus,
    pub pipeline_version: String,
    pub prompt_version: String,
    #[serde(default)]
    pub raw: String,
}

impl ClueRecord {
    pub fn approve(&mut self) -> Result<(), DatagenError> {
        match &self.status {
            ReviewStatus::Unreviewed | ReviewStatus::Approved => {
                self.status = ReviewStatus::Approved;
                Ok(())
            }
            ReviewStatus::Rejected { reason } => Err(DatagenError::Review(format!(
                "record {} is rejected ({reason}) and cannot be approved",
                self.sample_id
            ))),
        }
    }

    pub fn reject(&mut self, reason: &str) -> Result<(), DatagenError> {
        let reason = reason.trim();
        if reason.is_empty() {
            return Err(DatagenError::Review("a rejection needs a reason".into()));
        }
        match &self.status {
            ReviewStatus::Unreviewed => {
                self.status = ReviewStatus::Rejected { reason: reason.to_string() };
                Ok(())
            }
            ReviewStatus::Approved => Err(DatagenError::Review(format!(
                "record {} is approved and cannot be rejected",
                self.sample_id
            ))),
            ReviewStatus::Rejected { .. } => Err(DatagenError::Review(format!("record {} is already rejected", self.sample_id))),
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self.status, ReviewStatus::Rejected { .. })
    }
}

fn selection_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)clues?\s*[:=]?\s*\[([^\]]*)\]").unwrap())
}

fn rephrasing_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)rephras\w*\s*[:=]\s*(.+)").unwrap())
}

fn checked_indices(raw: Vec<usize>, n: usize) -> Result<Vec<usize>, String> {
    if raw.is_empty() {
        return Err("no clue selected".into());
    }
    if let Some(bad) = raw.iter().find(|&&i| i == 0 || i > n) {
        return Err(format!("clue index {bad} outside 1..={n}"));
    }
    let set: BTreeSet<usize> = raw.into_iter().collect();
    Ok(set.into_iter().collect())
}

/// Parses `Clues: [1, 3]; rephrasing: ...` or a JSON object with a
/// `clues`/`indices` array and a `rephrasing` string.
pub fn parse_clue_reply(reply: &str, n_clues: usize) -> Result<(Vec<usize>, String), String> {
    if let Some(m) = selection_re().captures(reply) {
        let mut idx = Vec::new();
        for part in m[1].split(',').map(str::trim).filter(|p| !p.is_empty()) {
            idx.push(part.parse::<usize>().map_err(|_| format!("not a clue number: {part:?}"))?);
        }
        let idx = checked_indices(idx, n_clues)?;
        let rest = &reply[m.get(0).unwrap().end()..];
        let rephrasing = rephrasing_re()
            .captures(rest)
            .map(|c| c[1].trim().trim_end_matches(['"', '\'']).trim().to_string())
            .unwrap_or_default();
        if rephrasing.is_empty() {
            return Err("selection without a rephrasing".into());
        }
        return Ok((idx, rephrasing));
    }
    for span in object_spans(reply) {
        let Ok(v) = serde_json::from_str::<serde_json::Value>(span) else { continue };
        let Some(obj) = v.as_object() else { continue };
        let arr = obj.iter().find(|(k, _)| matches!(k.to_ascii_lowercase().as_str(), "clues" | "indices" | "clue_indices"));
        let Some(arr) = arr.and_then(|(_, v)| v.as_array()) else { continue };
        let idx: Option<Vec<usize>> = arr.iter().map(|v| v.as_u64().map(|i| i as usize)).collect();
        let Some(idx) = idx else { continue };
        let idx = checked_indices(idx, n_clues)?;
        let rephrasing = obj
            .iter()
            .find(|(k, _)| k.to_ascii_lowercase().starts_with("rephras"))
            .and_then(|(_, v)| v.as_str())
            .map(|s| s.trim().to_string())
            .unwrap_or_default();
        if rephrasing.is_empty() {
            return Err("selection without a rephrasing".into());
        }
        return Ok((idx, rephrasing));
    }
    Err("no recognizable clue selection".into())
}

/// Builds the matching prompt for one country's clues.
pub fn clue_prompt(template: &str, country: &str, clues: &[String]) -> String {
    let list: Vec<String> = clues.iter().enumerate().map(|(i, c)| format!("{}. {c}", i + 1)).collect();
    template.replace("{country}", country).replace("{clues}", &list.join("\n"))
}

/// Asks the backend to pick and rephrase clues for a sample. Unparseable
/// replies (after one retry) and backend failures yield a rejected record.
pub fn match_clues(generator: &Generator<'_>, sample: &Sample, repo: &ClueRepository) -> Result<ClueRecord, DatagenError> {
    let (country, clues) = repo
        .get(&sample.labels.country)
        .ok_or_else(|| DatagenError::Precondition(format!("country {:?} is not in the clue repository", sample.labels.country)))?;
    if clues.is_empty() {
        return Err(DatagenError::Precondition(format!("country {country:?} has no clues")));
    }
    let prompt = clue_prompt(&generator.prompts.clue_match, country, clues);
    let history = vec![generator.image_turn(prompt, &sample.image_path)];
    let truth = sample.truth();
    let mut record = ClueRecord {
        sample_id: sample.sample_id.clone(),
        image_path: sample.image_path.clone(),
        country: country.to_string(),
        clue_indices: Vec::new(),
        clues: Vec::new(),
        rephrasing: String::new(),
        status: ReviewStatus::Unreviewed,
        pipeline_version: PIPELINE_VERSION.to_string(),
        prompt_version: generator.prompts.tag(),
        raw: String::new(),
    };
    let mut failure = Rejection {
        reason: RejectReason::ParseFailure,
        detail: String::new(),
        replies: Vec::new(),
    };
    for _ in 0..2 {
        match generator.ask(&history, &truth) {
            Ok(reply) => match parse_clue_reply(&reply, clues.len()) {
                Ok((idx, rephrasing)) => {
                    record.clues = idx.iter().map(|&i| clues[i - 1].clone()).collect();
                    record.clue_indices = idx;
                    record.rephrasing = rephrasing;
                    record.raw = reply;
                    return Ok(record);
                }
                Err(detail) => {
                    failure.reason = RejectReason::ParseFailure;
                    failure.detail = detail;
                    failure.replies.push(reply);
                }
            },
            Err(e) => {
                failure.reason = RejectReason::Backend;
                failure.detail = e;
            }
        }
    }
    record.raw = failure.replies.last().cloned().unwrap_or_default();
    record.status = ReviewStatus::Rejected {
        reason: format!("{}: {}", failure.reason.as_str(), failure.detail),
    };
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(c: &str, t: &str) -> ClueEntry {
        ClueEntry {
            country: c.into(),
            clue_text: t.into(),
            source_url: None,
        }
    }

    #[test]
    fn groups_and_dedupes() {
        let (repo, q) = build_repository(&[e("Chile", "a"), e("Chile", "b"), e("Chile", "a"), e("chile ", "c")], None);
        assert_eq!(repo.len(), 1);
        assert_eq!(repo.clues["Chile"], vec!["a", "b", "c"]);
        assert!(q.is_empty());
    }

    #[test]
    fn quarantines_bad_entries() {
        let known: BTreeSet<String> = ["Chile".to_string()].into();
        let (repo, q) = build_repository(&[e("", "a"), e("Chile", " "), e("Atlantis", "x"), e("Chile", "y")], Some(&known));
        assert_eq!(repo.n_clues(), 1);
        assert_eq!(q.len(), 3);
    }

    #[test]
    fn parses_selection_forms() {
        assert_eq!(parse_clue_reply("Clues: [1,3]; rephrasing: red soil and bollards", 3).unwrap(), (vec![1, 3], "red soil and bollards".into()));
        assert_eq!(parse_clue_reply("clues [3, 1, 3]\nRephrasing: x", 3).unwrap().0, vec![1, 3]);
        assert_eq!(parse_clue_reply(r#"{"clues": [2], "rephrasing": "y"}"#, 2).unwrap(), (vec![2], "y".into()));
        assert!(parse_clue_reply("Clues: [4]; rephrasing: x", 3).is_err());
        assert!(parse_clue_reply("Clues: []; rephrasing: x", 3).is_err());
        assert!(parse_clue_reply("I see a road.", 3).is_err());
    }

    #[test]
    fn review_state_machine() {
        let mut r = ClueRecord {
            sample_id: "s".into(),
            image_path: "s.jpg".into(),
            country: "Chile".into(),
            clue_indices: vec![1],
            clues: vec!["a".into()],
            rephrasing: "a".into(),
            status: ReviewStatus::Unreviewed,
            pipeline_version: "1".into(),
            prompt_version: "mg@1".into(),
            raw: String::new(),
        };
        let mut rejected = r.clone();
        assert!(rejected.reject("").is_err());
        rejected.reject("blurry").unwrap();
        assert!(rejected.approve().is_err());
        r.approve().unwrap();
        r.approve().unwrap();
        assert!(r.reject("late").is_err());
        let json = serde_json::to_string(&rejected.status).unwrap();
        assert_eq!(json, r#"{"state":"rejected","reason":"blurry"}"#);
    }
}
