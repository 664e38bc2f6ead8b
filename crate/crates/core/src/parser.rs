//! Extraction of structured predictions from free-form model output.
//!
//! The extraction grammar, versioned as [`PARSER_VERSION`]:
//!
//! 1. Every `{` in the text is a candidate start, tried in order of position.
//!    Its span ends at the matching `}`, found by a scanner that skips braces
//!    inside `"..."` and `'...'` strings (backslash escapes honored). Spans
//!    without a matching brace are skipped. Code fences and surrounding prose
//!    therefore need no special handling.
//! 2. The span is parsed as strict JSON. On failure it is rewritten with the
//!    relaxed rules and parsed again:
//!    - single-quoted strings become double-quoted,
//!    - typographic double quotes (U+201C, U+201D) become `"`,
//!    - a comma directly before `}` or `]` (ignoring whitespace) is dropped.
//! 3. The first span that yields an object holding at least one recognized
//!    key wins. Keys match case-insensitively after trimming: `country`,
//!    `region`, `city`, `lat`/`latitude`, `lon`/`lng`/`longitude`,
//!    `clues`/`clue`.
//! 4. Latitude and longitude are accepted as JSON numbers or numeric strings
//!    using a decimal point. Comma decimals (`"48,85"`) are rejected. Both
//!    must be present and in range for a coordinate to be set.
//! 5. The prediction is valid when at least one admin label or a coordinate
//!    survives.

use regex::Regex;
use serde_json::{Map, Value};
use std::sync::OnceLock;
use thiserror::Error;

use crate::geo::{GeoCoordinate, GeoError};
use crate::metrics::Prediction;

pub const PARSER_VERSION: &str = "1.0";

/// Upper bound on candidate `{` positions examined in one input.
const MAX_CANDIDATES: usize = 512;

pub fn parse_prediction(raw: &str) -> Prediction {
    for span in object_spans(raw).take(MAX_CANDIDATES) {
        let Some(obj) = parse_object(span) else {
            continue;
        };
        if let Some(pred) = prediction_from_object(&obj, raw) {
            return pred;
        }
    }
    Prediction::invalid(raw)
}

/// Text remaining after removing the first recognized JSON object and any
/// code-fence markers. Used as clue text when a model answers in prose.
pub fn prose_outside_json(raw: &str) -> Option<String> {
    let mut text = raw.to_string();
    for span in object_spans(raw).take(MAX_CANDIDATES) {
        if let Some(obj) = parse_object(span) {
            if has_recognized_key(&obj) {
                text = raw.replacen(span, " ", 1);
                break;
            }
        }
    }
    let cleaned: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.starts_with("```"))
        .filter(|l| !l.is_empty())
        .collect();
    let joined = cleaned.join(" ");
    let joined = joined.trim();
    (!joined.is_empty()).then(|| joined.to_string())
}

/// All balanced `{...}` spans, ordered by start position.
pub fn object_spans(raw: &str) -> impl Iterator<Item = &str> + '_ {
    raw.char_indices()
        .filter(|&(_, c)| c == '{')
        .filter_map(move |(start, _)| balanced_end(raw, start).map(|end| &raw[start..end]))
}

fn balanced_end(raw: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_object(span: &str) -> Option<Map<String, Value>> {
    let value = serde_json::from_str::<Value>(span)
        .ok()
        .or_else(|| serde_json::from_str::<Value>(&relax(span)).ok())?;
    match value {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

/// Applies the relaxed rewriting rules to a candidate span.
fn relax(span: &str) -> String {
    let mut out = String::with_capacity(span.len() + 8);
    let mut chars = span.chars().peekable();
    let mut in_double = false;
    while let Some(c) = chars.next() {
        if in_double {
            match c {
                '\\' => {
                    out.push(c);
                    if let Some(n) = chars.next() {
                        out.push(n);
                    }
                }
                '"' | '\u{201d}' => {
                    out.push('"');
                    in_double = false;
                }
                _ => out.push(c),
            }
            continue;
        }
        match c {
            '"' | '\u{201c}' | '\u{201d}' => {
                out.push('"');
                in_double = true;
            }
            '\'' => {
                out.push('"');
                while let Some(n) = chars.next() {
                    match n {
                        '\\' => match chars.next() {
                            Some('\'') => out.push('\''),
                            Some(e) => {
                                out.push('\\');
                                out.push(e);
                            }
                            None => {}
                        },
                        '\'' => break,
                        '"' => out.push_str("\\\""),
                        _ => out.push(n),
                    }
                }
                out.push('"');
            }
            ',' => {
                let mut lookahead = chars.clone();
                let next = loop {
                    match lookahead.next() {
                        Some(w) if w.is_whitespace() => continue,
                        other => break other,
                    }
                };
                if !matches!(next, Some('}') | Some(']')) {
                    out.push(',');
                }
            }
            _ => out.push(c),
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Key {
    Country,
    Region,
    City,
    Lat,
    Lon,
    Clues,
}

fn classify(key: &str) -> Option<Key> {
    match key.trim().to_lowercase().as_str() {
        "country" => Some(Key::Country),
        "region" => Some(Key::Region),
        "city" => Some(Key::City),
        "lat" | "latitude" => Some(Key::Lat),
        "lon" | "lng" | "longitude" => Some(Key::Lon),
        "clues" | "clue" => Some(Key::Clues),
        _ => None,
    }
}

fn has_recognized_key(obj: &Map<String, Value>) -> bool {
    obj.keys().any(|k| classify(k).is_some())
}

fn label(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => {
            let t = s.trim();
            (!t.is_empty()).then(|| t.to_string())
        }
        _ => None,
    }
}

/// Number or numeric string with a decimal point; finite only.
pub fn degrees(v: &Value) -> Option<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => {
            let t = s.trim();
            if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+')) {
                return None;
            }
            t.parse::<f64>().ok()?
        }
        _ => return None,
    };
    x.is_finite().then_some(x)
}

fn clue_text(v: &Value) -> Option<String> {
    match v {
        Value::String(_) => label(v),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(label).collect();
            (!parts.is_empty()).then(|| parts.join(" "))
        }
        _ => None,
    }
}

fn prediction_from_object(obj: &Map<String, Value>, raw: &str) -> Option<Prediction> {
    if !has_recognized_key(obj) {
        return None;
    }
    let mut pred = Prediction::invalid(raw);
    let (mut lat, mut lon) = (None, None);
    // First occurrence of each recognized key wins (serde_json keeps the last
    // duplicate; this only matters across case variants).
    for (k, v) in obj {
        match classify(k) {
            Some(Key::Country) if pred.country.is_none() => pred.country = label(v),
            Some(Key::Region) if pred.region.is_none() => pred.region = label(v),
            Some(Key::City) if pred.city.is_none() => pred.city = label(v),
            Some(Key::Lat) if lat.is_none() => lat = degrees(v),
            Some(Key::Lon) if lon.is_none() => lon = degrees(v),
            Some(Key::Clues) if pred.clues.is_none() => pred.clues = clue_text(v),
            _ => {}
        }
    }
    if let (Some(la), Some(lo)) = (lat, lon) {
        pred.coord = GeoCoordinate::new(la, lo).ok();
    }
    pred.valid = pred.has_labels() || pred.coord.is_some();
    Some(pred)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoordParseError {
    #[error("no coordinate pair found")]
    NoMatch,
    #[error(transparent)]
    OutOfRange(#[from] GeoError),
}

fn tuple_patterns() -> &'static [Regex; 3] {
    static PATTERNS: OnceLock<[Regex; 3]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        const NUM: &str = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)";
        [
            Regex::new(&format!(r"\{{\s*\(\s*({NUM})\s*,\s*({NUM})\s*\)\s*\}}")).unwrap(),
            Regex::new(&format!(r"\(\s*({NUM})\s*,\s*({NUM})\s*\)")).unwrap(),
            Regex::new(&format!(r"(?:^|[^\w.])({NUM})\s*,\s*({NUM})(?:[^\w.]|$)")).unwrap(),
        ]
    })
}

/// Recognizes `{(lat, lon)}`, then `(lat, lon)`, then bare `lat, lon`; the
/// first match of the highest-priority shape is used.
pub fn parse_coordinate_tuple(raw: &str) -> Result<GeoCoordinate, CoordParseError> {
    for re in tuple_patterns() {
        if let Some(caps) = re.captures(raw) {
            let lat: f64 = caps[1].parse().map_err(|_| CoordParseError::NoMatch)?;
            let lon: f64 = caps[2].parse().map_err(|_| CoordParseError::NoMatch)?;
            return Ok(GeoCoordinate::new(lat, lon)?);
        }
    }
    Err(CoordParseError::NoMatch)
}

/// Serializes a prediction in the reference answer shape, with coordinates
/// as strings.
pub fn to_answer_json(pred: &Prediction) -> String {
    let mut m = Map::new();
    for (k, v) in [("country", &pred.country), ("region", &pred.region), ("city", &pred.city)] {
        if let Some(v) = v {
            m.insert(k.into(), Value::String(v.clone()));
        }
    }
    if let Some(c) = pred.coord {
        m.insert("lat".into(), Value::String(c.lat().to_string()));
        m.insert("lon".into(), Value::String(c.lon().to_string()));
    }
    Value::Object(m).to_string()
}
