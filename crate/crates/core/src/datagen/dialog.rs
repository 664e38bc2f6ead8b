//! Four-round reasoning dialogs and their correction pass.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Generator, RejectReason, Rejection, INTROSPECTION_THRESHOLD_KM, PIPELINE_VERSION, SEGMENTATION_VERSION};
use crate::geo::{haversine, AdminLabels, GeoCoordinate};
use crate::metrics::normalize_name;
use crate::model::ChatTurn;
use crate::parser::{object_spans, parse_coordinate_tuple};
use crate::sample::{Sample, Truth};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogStatus {
    Deduced,
    Introspected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_dataset: Option<String>,
    pub image_path: String,
    pub qa: [QaPair; 4],
    /// Final coordinate from A4.
    pub predicted: GeoCoordinate,
    /// Coordinate of the first deduction, kept when introspection replaces it.
    pub original_prediction: GeoCoordinate,
    pub truth: GeoCoordinate,
    pub status: DialogStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_qa: Option<[QaPair; 4]>,
    pub deduction_reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub introspection_reply: Option<String>,
    pub pipeline_version: String,
    pub segmentation_version: String,
    pub prompt_version: String,
}

/// True when the predicted coordinate lies strictly more than 25 km from truth.
pub fn decision_criterion(pred: GeoCoordinate, truth: GeoCoordinate) -> bool {
    haversine(pred, truth).km() > INTROSPECTION_THRESHOLD_KM
}

fn anchor_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[ \t>#*_\-]*(Q|A|Question|Answer)\s*([1-9][0-9]?)\s*\**\s*[:.)\-]+[ \t]*\**[ \t]*").unwrap()
    })
}

fn strip_fence(s: &str) -> &str {
    let t = s.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
        return rest.trim_end().trim_end_matches("```").trim();
    }
    t
}

fn pair_from_value(v: &Value) -> Option<QaPair> {
    let obj = v.as_object()?;
    let get = |names: &[&str]| {
        obj.iter()
            .find(|(k, _)| names.contains(&k.to_ascii_lowercase().as_str()))
            .and_then(|(_, v)| v.as_str())
            .map(|s| s.trim().to_string())
    };
    Some(QaPair {
        question: get(&["question", "q"])?,
        answer: get(&["answer", "a"])?,
    })
}

fn pairs_from_json(v: &Value) -> Option<Vec<QaPair>> {
    match v {
        Value::Array(items) => items.iter().map(pair_from_value).collect(),
        Value::Object(obj) => {
            if let Some(inner) = obj.iter().find(|(k, _)| matches!(k.to_ascii_lowercase().as_str(), "qa" | "dialog" | "pairs")) {
                return pairs_from_json(inner.1);
            }
            let lookup = |k: String| {
                obj.iter()
                    .find(|(key, _)| key.eq_ignore_ascii_case(&k))
                    .and_then(|(_, v)| v.as_str())
                    .map(|s| s.trim().to_string())
            };
            let mut out = Vec::new();
            for i in 1.. {
                match (lookup(format!("Q{i}")), lookup(format!("A{i}"))) {
                    (Some(question), Some(answer)) => out.push(QaPair { question, answer }),
                    _ => break,
                }
            }
            (!out.is_empty()).then_some(out)
        }
        _ => None,
    }
}

fn json_pairs(reply: &str) -> Option<Vec<QaPair>> {
    let body = strip_fence(reply);
    if let Ok(v) = serde_json::from_str::<Value>(body) {
        return pairs_from_json(&v);
    }
    object_spans(reply)
        .filter_map(|s| serde_json::from_str::<Value>(s).ok())
        .find_map(|v| pairs_from_json(&v))
}

/// Splits a reply into Q1/A1 .. Q4/A4.
///
/// Anchors are `Q1`, `A1`, `Question 1`, `Answer 1` and so on at the start
/// of a line (markdown emphasis and `: . ) -` delimiters tolerated), and they
/// must occur exactly once each in order. Replies without anchors may be a
/// JSON list of `{question, answer}` objects or an object keyed `Q1`..`A4`.
pub fn segment_qa(reply: &str) -> Result<[QaPair; 4], Rejection> {
    let structure = |detail: String| Rejection {
        reason: RejectReason::Structure,
        detail,
        replies: vec![reply.to_string()],
    };
    let anchors: Vec<(bool, usize, usize, usize)> = anchor_re()
        .captures_iter(reply)
        .map(|c| {
            let m = c.get(0).unwrap();
            let is_q = c[1].to_ascii_lowercase().starts_with('q');
            (is_q, c[2].parse::<usize>().unwrap(), m.start(), m.end())
        })
        .collect();

    let pairs: Vec<QaPair> = if anchors.is_empty() {
        json_pairs(reply).ok_or_else(|| structure("no Q/A anchors or structured pairs found".into()))?
    } else {
        let expected: Vec<(bool, usize)> = (1..=4).flat_map(|i| [(true, i), (false, i)]).collect();
        let found: Vec<(bool, usize)> = anchors.iter().map(|a| (a.0, a.1)).collect();
        if found != expected {
            let shown: Vec<String> = found.iter().map(|(q, i)| format!("{}{i}", if *q { 'Q' } else { 'A' })).collect();
            return Err(structure(format!("expected Q1 A1 .. Q4 A4, found {}", shown.join(" "))));
        }
        let mut texts = Vec::new();
        for (k, a) in anchors.iter().enumerate() {
            let end = anchors.get(k + 1).map_or(reply.len(), |n| n.2);
            texts.push(reply[a.3..end].trim().trim_end_matches("**").trim().to_string());
        }
        texts
            .chunks(2)
            .map(|qa| QaPair {
                question: qa[0].clone(),
                answer: qa[1].clone(),
            })
            .collect()
    };
    if pairs.len() != 4 {
        return Err(structure(format!("expected 4 question/answer pairs, found {}", pairs.len())));
    }
    if let Some(i) = pairs.iter().position(|p| p.question.is_empty() || p.answer.is_empty()) {
        return Err(structure(format!("pair {} has an empty question or answer", i + 1)));
    }
    Ok(pairs.try_into().expect("length checked"))
}

fn parse_dialog(reply: &str) -> Result<([QaPair; 4], GeoCoordinate), Rejection> {
    let qa = segment_qa(reply)?;
    let coord = parse_coordinate_tuple(&qa[3].answer).map_err(|e| Rejection {
        reason: RejectReason::Coordinate,
        detail: format!("A4: {e}"),
        replies: vec![reply.to_string()],
    })?;
    Ok((qa, coord))
}

fn format_coord(c: GeoCoordinate) -> String {
    format!("{{{c}}}")
}

fn deduction_history(generator: &Generator<'_>, image_path: &str) -> Vec<ChatTurn> {
    vec![generator.image_turn(generator.prompts.deduction.clone(), image_path)]
}

/// Runs the deduction prompt once, retrying a single time when the reply
/// cannot be segmented or A4 lacks a coordinate.
pub fn cot_deduction(generator: &Generator<'_>, sample: &Sample) -> Result<DialogRecord, Rejection> {
    let history = deduction_history(generator, &sample.image_path);
    let truth = sample.truth();
    let mut replies = Vec::new();
    let mut last = None;
    for _ in 0..2 {
        let reply = match generator.ask(&history, &truth) {
            Ok(r) => r,
            Err(e) => {
                last = Some(Rejection {
                    reason: RejectReason::Backend,
                    detail: e,
                    replies: Vec::new(),
                });
                continue;
            }
        };
        replies.push(reply.clone());
        match parse_dialog(&reply) {
            Ok((qa, coord)) => {
                return Ok(DialogRecord {
                    question_id: sample.sample_id.clone(),
                    source_dataset: sample.source_dataset.clone(),
                    image_path: sample.image_path.clone(),
                    qa,
                    predicted: coord,
                    original_prediction: coord,
                    truth: sample.coord,
                    status: DialogStatus::Deduced,
                    original_qa: None,
                    deduction_reply: reply,
                    introspection_reply: None,
                    pipeline_version: PIPELINE_VERSION.to_string(),
                    segmentation_version: SEGMENTATION_VERSION.to_string(),
                    prompt_version: generator.prompts.tag(),
                })
            }
            Err(r) => last = Some(r),
        }
    }
    let mut r = last.expect("at least one attempt");
    r.replies = replies;
    Err(r)
}

fn same_questions(a: &[QaPair; 4], b: &[QaPair; 4]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| normalize_name(&x.question) != normalize_name(&y.question))
}

/// Sends the correction prompt with the true coordinate. Each failure class
/// (structure, coordinate, question drift, uncorrected, backend) gets one
/// retry before the record is rejected.
pub fn cot_introspection(generator: &Generator<'_>, record: &DialogRecord) -> Result<DialogRecord, Rejection> {
    if record.status != DialogStatus::Deduced || !decision_criterion(record.predicted, record.truth) {
        return Err(Rejection {
            reason: RejectReason::Structure,
            detail: "introspection needs a deduced record more than 25 km from truth".into(),
            replies: Vec::new(),
        });
    }
    let mut history = deduction_history(generator, &record.image_path);
    history.push(ChatTurn::assistant(record.deduction_reply.clone()));
    history.push(ChatTurn::user(generator.prompts.introspection.replace("{(X, Y)}", &format_coord(record.truth))));
    let truth = Truth {
        labels: AdminLabels::default(),
        coord: Some(record.truth),
    };

    let mut retried: Vec<RejectReason> = Vec::new();
    let mut replies = Vec::new();
    loop {
        let outcome = match generator.ask(&history, &truth) {
            Err(e) => Err(Rejection {
                reason: RejectReason::Backend,
                detail: e,
                replies: Vec::new(),
            }),
            Ok(reply) => {
                replies.push(reply.clone());
                parse_dialog(&reply).and_then(|(qa, coord)| {
                    if let Some(i) = same_questions(&record.qa, &qa) {
                        return Err(Rejection {
                            reason: RejectReason::QuestionDrift,
                            detail: format!("Q{} changed", i + 1),
                            replies: Vec::new(),
                        });
                    }
                    if decision_criterion(coord, record.truth) {
                        return Err(Rejection {
                            reason: RejectReason::Uncorrected,
                            detail: format!("A4 is {:.3} km from truth", haversine(coord, record.truth).km()),
                            replies: Vec::new(),
                        });
                    }
                    Ok((qa, coord, reply))
                })
            }
        };
        match outcome {
            Ok((qa, coord, reply)) => {
                let mut out = record.clone();
                out.original_qa = Some(record.qa.clone());
                out.qa = qa;
                out.predicted = coord;
                out.status = DialogStatus::Introspected;
                out.introspection_reply = Some(reply);
                return Ok(out);
            }
            Err(mut r) => {
                if retried.contains(&r.reason) {
                    r.replies = replies;
                    return Err(r);
                }
                retried.push(r.reason);
            }
        }
    }
}
