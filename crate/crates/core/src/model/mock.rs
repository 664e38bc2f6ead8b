//! Deterministic backends for tests and offline runs.
//!
//! Every mock is a pure function of the request history, the bound truth
//! and its own configuration.

use serde::{Deserialize, Serialize};

use super::{validate_history, BackendError, ChatBackend, CompletionRequest, Role};
use crate::geo::GeoCoordinate;
use crate::sample::Truth;

pub const UNBOUND_REPLY: &str = "I cannot determine the location.";

/// Answer in the reference JSON shape: admin labels then `lat`/`lon` as
/// strings, `", "` separators.
pub fn answer_json(truth: &Truth, coord: Option<GeoCoordinate>) -> String {
    let q = |s: &str| serde_json::to_string(s).expect("string serializes");
    let mut parts = vec![format!("\"country\": {}", q(&truth.labels.country))];
    if !truth.labels.region.is_empty() {
        parts.push(format!("\"region\": {}", q(&truth.labels.region)));
    }
    if !truth.labels.city.is_empty() {
        parts.push(format!("\"city\": {}", q(&truth.labels.city)));
    }
    if let Some(c) = coord {
        parts.push(format!("\"lat\": \"{}\"", c.lat()));
        parts.push(format!("\"lon\": \"{}\"", c.lon()));
    }
    format!("{{{}}}", parts.join(", "))
}

/// Echoes the bound ground truth.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    id: String,
}

impl OracleBackend {
    pub fn new() -> Self {
        OracleBackend { id: "oracle".into() }
    }
}

impl ChatBackend for OracleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        validate_history(req.history)?;
        Ok(match req.binding {
            Some(t) => answer_json(t, t.coord),
            None => UNBOUND_REPLY.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConstantBackend {
    id: String,
    text: String,
}

impl ConstantBackend {
    pub fn new(text: impl Into<String>) -> Self {
        ConstantBackend {
            id: "constant".into(),
            text: text.into(),
        }
    }
}

impl ChatBackend for ConstantBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        validate_history(req.history)?;
        Ok(self.text.clone())
    }
}

/// Oracle whose coordinate is displaced by a fixed distance and bearing.
#[derive(Debug, Clone)]
pub struct NoisyOracleBackend {
    id: String,
    pub offset_km: f64,
    pub bearing_deg: f64,
}

impl NoisyOracleBackend {
    pub fn new(offset_km: f64, bearing_deg: f64) -> Self {
        NoisyOracleBackend {
            id: format!("noisy:{offset_km}@{bearing_deg}"),
            offset_km,
            bearing_deg,
        }
    }
}

impl ChatBackend for NoisyOracleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        validate_history(req.history)?;
        Ok(match req.binding {
            Some(t) => answer_json(t, t.coord.map(|c| c.destination(self.bearing_deg, self.offset_km))),
            None => UNBOUND_REPLY.to_string(),
        })
    }
}

/// Oracle whose coordinate error shrinks by `factor` with every assistant
/// turn already present in the history.
#[derive(Debug, Clone)]
pub struct ConvergingBackend {
    id: String,
    pub initial_km: f64,
    pub bearing_deg: f64,
    pub factor: f64,
}

impl ConvergingBackend {
    pub fn halving(initial_km: f64, bearing_deg: f64) -> Self {
        ConvergingBackend {
            id: format!("converging:{initial_km}"),
            initial_km,
            bearing_deg,
            factor: 0.5,
        }
    }
}

impl ChatBackend for ConvergingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        validate_history(req.history)?;
        let prior = req.history.iter().filter(|t| t.role == Role::Assistant).count() as i32;
        let offset = self.initial_km * self.factor.powi(prior);
        Ok(match req.binding {
            Some(t) => answer_json(t, t.coord.map(|c| c.destination(self.bearing_deg, offset))),
            None => UNBOUND_REPLY.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Case-insensitive substring matched against user and assistant turns.
    pub contains: String,
    pub reply: String,
}

/// Rule table backend, loaded from JSON:
///
/// ```json
/// {"id": "brazil", "rules": [{"contains": "portuguese", "reply": "..."}],
///  "default": "...", "first_candidate": false}
/// ```
///
/// Non-system turns are scanned from newest to oldest; the first turn matching
/// any rule (rules tried in order) selects the reply. With
/// `first_candidate`, the newest user turn holding a numbered list entry
/// `1. Name` is answered with that name instead. Replies may
/// use `{country}`, `{region}`, `{city}`, `{lat}`, `{lon}` and
/// `{truth_json}`, filled from the bound truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBackend {
    #[serde(default = "scripted_id")]
    pub id: String,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: String,
    #[serde(default)]
    pub first_candidate: bool,
}

fn scripted_id() -> String {
    "scripted".into()
}

impl ScriptedBackend {
    pub fn new(default: impl Into<String>) -> Self {
        ScriptedBackend {
            id: scripted_id(),
            rules: Vec::new(),
            default: default.into(),
            first_candidate: false,
        }
    }

    pub fn rule(mut self, contains: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            contains: contains.into(),
            reply: reply.into(),
        });
        self
    }

    pub fn first_candidate() -> Self {
        ScriptedBackend {
            first_candidate: true,
            ..ScriptedBackend::new(UNBOUND_REPLY)
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn fill(&self, template: &str, truth: Option<&Truth>) -> String {
        let Some(t) = truth else {
            return template.to_string();
        };
        let (lat, lon) = match t.coord {
            Some(c) => (c.lat().to_string(), c.lon().to_string()),
            None => (String::new(), String::new()),
        };
        template
            .replace("{truth_json}", &answer_json(t, t.coord))
            .replace("{country}", &t.labels.country)
            .replace("{region}", &t.labels.region)
            .replace("{city}", &t.labels.city)
            .replace("{lat}", &lat)
            .replace("{lon}", &lon)
    }
}

/// First entry of a `1. Name` / `1) Name` list in the text.
pub fn first_listed(text: &str) -> Option<&str> {
    text.lines().find_map(|line| {
        let l = line.trim_start();
        let rest = l.strip_prefix("1.").or_else(|| l.strip_prefix("1)"))?;
        let name = rest.trim();
        (!name.is_empty()).then_some(name)
    })
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        validate_history(req.history)?;
        if self.first_candidate {
            let listed = req
                .history
                .iter()
                .rev()
                .filter(|t| t.role == Role::User)
                .find_map(|t| first_listed(&t.text));
            if let Some(name) = listed {
                return Ok(name.to_string());
            }
        }
        let lowered: Vec<String> = self.rules.iter().map(|r| r.contains.to_lowercase()).collect();
        for turn in req.history.iter().rev().filter(|t| t.role != Role::System) {
            let text = turn.text.to_lowercase();
            if let Some(i) = lowered.iter().position(|needle| text.contains(needle.as_str())) {
                return Ok(self.fill(&self.rules[i].reply, req.binding));
            }
        }
        Ok(self.fill(&self.default, req.binding))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{haversine, AdminLabels};
    use crate::model::{ChatTurn, GenerationParams};
    use crate::parser::parse_prediction;

    fn seattle() -> Truth {
        Truth {
            labels: AdminLabels::new("United States", "Washington", "Seattle"),
            coord: Some(GeoCoordinate::new(47.6069, -122.3283).unwrap()),
        }
    }

    fn ask<B: ChatBackend>(b: &B, history: &[ChatTurn], truth: Option<&Truth>) -> String {
        let params = GenerationParams::default();
        b.complete(&CompletionRequest::new(history, &params).bound(truth)).unwrap()
    }

    #[test]
    fn oracle_reproduces_reference_answer() {
        let h = [ChatTurn::user_with_image("Determine the location of the image", "x.jpg")];
        assert_eq!(
            ask(&OracleBackend::new(), &h, Some(&seattle())),
            r#"{"country": "United States", "region": "Washington", "city": "Seattle", "lat": "47.6069", "lon": "-122.3283"}"#
        );
        assert_eq!(ask(&OracleBackend::new(), &h, None), UNBOUND_REPLY);
    }

    #[test]
    fn constant_ignores_input() {
        let b = ConstantBackend::new("hello");
        assert_eq!(ask(&b, &[ChatTurn::user("a")], Some(&seattle())), "hello");
        assert_eq!(ask(&b, &[ChatTurn::user("b")], None), "hello");
    }

    #[test]
    fn noisy_oracle_offsets_east() {
        let b = NoisyOracleBackend::new(30.0, 90.0);
        let reply = ask(&b, &[ChatTurn::user("where")], Some(&seattle()));
        let p = parse_prediction(&reply);
        let truth = seattle().coord.unwrap();
        let got = p.coord.unwrap();
        assert!((haversine(truth, got).km() - 30.0).abs() < 1e-3);
        assert!(got.lon() > truth.lon());
        assert!((got.lat() - truth.lat()).abs() < 0.05);
        assert_eq!(p.country.as_deref(), Some("United States"));
    }

    #[test]
    fn converging_halves_per_assistant_turn() {
        let b = ConvergingBackend::halving(400.0, 45.0);
        let truth = seattle();
        let mut h = vec![ChatTurn::user("where")];
        let mut last = f64::INFINITY;
        for expected in [400.0, 200.0, 100.0] {
            let r = ask(&b, &h, Some(&truth));
            let d = haversine(parse_prediction(&r).coord.unwrap(), truth.coord.unwrap()).km();
            assert!((d - expected).abs() < 1e-3, "{d} vs {expected}");
            assert!(d < last);
            last = d;
            h.push(ChatTurn::assistant(r));
            h.push(ChatTurn::user("closer"));
        }
    }

    #[test]
    fn scripted_rules_newest_turn_first() {
        let b = ScriptedBackend::new(r#"{"country": "France"}"#)
            .rule("portuguese", r#"{"country": "Brazil"}"#)
            .rule("snow", r#"{"country": "{country}"}"#);
        assert_eq!(ask(&b, &[ChatTurn::user("hi")], None), r#"{"country": "France"}"#);
        let h = [
            ChatTurn::user("hi"),
            ChatTurn::assistant("France"),
            ChatTurn::user("The signage is in Portuguese."),
        ];
        assert_eq!(ask(&b, &h, None), r#"{"country": "Brazil"}"#);
        let h = [ChatTurn::user("Portuguese"), ChatTurn::assistant("x"), ChatTurn::user("there is snow")];
        assert_eq!(ask(&b, &h, Some(&seattle())), r#"{"country": "United States"}"#);
    }

    #[test]
    fn scripted_from_json_and_first_candidate() {
        let b = ScriptedBackend::from_json(r#"{"first_candidate": true, "default": "none"}"#).unwrap();
        assert_eq!(ask(&b, &[ChatTurn::user("Pick one:\n1. Chile\n2. Peru")], None), "Chile");
        assert_eq!(ask(&b, &[ChatTurn::user("no list")], None), "none");
        assert_eq!(b.id(), "scripted");
    }

    #[test]
    fn mocks_reject_empty_history() {
        let params = GenerationParams::default();
        let err = OracleBackend::new().complete(&CompletionRequest::new(&[], &params)).unwrap_err();
        assert!(matches!(err, BackendError::InvalidRequest(_)));
    }
}
