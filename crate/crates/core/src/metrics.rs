//! Admin-level, distance-threshold and Geoscore metrics.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::geo::{geoscore, haversine, AdminLabels, DistanceKm, GeoCoordinate};

/// Distance thresholds in kilometers, ascending.
pub const THRESHOLDS_KM: [u32; 5] = [1, 25, 200, 750, 2500];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty score list")]
    Empty,
    #[error("scores ({scores}) and validity flags ({validity}) differ in length")]
    LengthMismatch { scores: usize, validity: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid alias file: {0}")]
    Alias(#[from] serde_json::Error),
}

/// A parsed model answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub country: Option<String>,
    pub region: Option<String>,
    pub city: Option<String>,
    pub coord: Option<GeoCoordinate>,
    pub clues: Option<String>,
    pub valid: bool,
    pub raw: String,
}

impl Prediction {
    pub fn invalid(raw: impl Into<String>) -> Self {
        Prediction {
            raw: raw.into(),
            ..Default::default()
        }
    }

    pub fn has_labels(&self) -> bool {
        self.country.is_some() || self.region.is_some() || self.city.is_some()
    }
}

/// Name normalizer: NFC, lowercase, trim, internal whitespace collapsed, then
/// an optional alias lookup on the normalized form.
#[derive(Debug, Clone, Default)]
pub struct NameMatcher {
    aliases: HashMap<String, String>,
}

pub fn normalize_name(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    let lower = nfc.to_lowercase();
    lower.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl NameMatcher {
    pub fn with_aliases<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let aliases = pairs
            .into_iter()
            .map(|(a, b)| (normalize_name(a.as_ref()), normalize_name(b.as_ref())))
            .collect();
        Self { aliases }
    }

    /// Alias file: a JSON object mapping alias to canonical name.
    pub fn from_alias_json<R: Read>(reader: R) -> Result<Self, MetricsError> {
        let map: BTreeMap<String, String> = serde_json::from_reader(reader)?;
        Ok(Self::with_aliases(map))
    }

    pub fn key(&self, s: &str) -> String {
        let n = normalize_name(s);
        match self.aliases.get(&n) {
            Some(canon) => canon.clone(),
            None => n,
        }
    }

    pub fn same(&self, a: &str, b: &str) -> bool {
        let ka = self.key(a);
        !ka.is_empty() && ka == self.key(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdminScore {
    pub country: bool,
    pub region: bool,
    pub city: bool,
}

impl AdminScore {
    pub fn gate(self) -> Self {
        let country = self.country;
        let region = country && self.region;
        let city = region && self.city;
        AdminScore { country, region, city }
    }
}

pub fn score_admin(pred: &Prediction, truth: &AdminLabels, gated: bool) -> AdminScore {
    score_admin_with(&NameMatcher::default(), pred, truth, gated)
}

pub fn score_admin_with(
    matcher: &NameMatcher,
    pred: &Prediction,
    truth: &AdminLabels,
    gated: bool,
) -> AdminScore {
    if !pred.valid {
        return AdminScore::default();
    }
    let hit = |p: &Option<String>, t: &str| p.as_deref().is_some_and(|p| matcher.same(p, t));
    let raw = AdminScore {
        country: hit(&pred.country, &truth.country),
        region: hit(&pred.region, &truth.region),
        city: hit(&pred.city, &truth.city),
    };
    if gated {
        raw.gate()
    } else {
        raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceScore {
    pub distance: Option<DistanceKm>,
    pub geoscore: Option<f64>,
    pub within_threshold: BTreeMap<u32, bool>,
}

pub fn score_distance(pred: &Prediction, truth: GeoCoordinate) -> DistanceScore {
    let coord = if pred.valid { pred.coord } else { None };
    match coord {
        Some(c) => {
            let d = haversine(c, truth);
            DistanceScore {
                distance: Some(d),
                geoscore: Some(geoscore(d)),
                within_threshold: THRESHOLDS_KM.iter().map(|&t| (t, d.km() <= t as f64)).collect(),
            }
        }
        None => DistanceScore {
            distance: None,
            geoscore: None,
            within_threshold: THRESHOLDS_KM.iter().map(|&t| (t, false)).collect(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub valid: bool,
    pub country_correct: bool,
    pub region_correct: bool,
    pub city_correct: bool,
    pub distance: Option<DistanceKm>,
    pub geoscore: Option<f64>,
    pub within_threshold: BTreeMap<u32, bool>,
    /// Set when the backend never produced an answer (transport/auth).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_error: Option<String>,
}

impl SampleScore {
    pub fn from_parts(
        sample_id: impl Into<String>,
        valid: bool,
        admin: AdminScore,
        dist: DistanceScore,
    ) -> Self {
        SampleScore {
            sample_id: sample_id.into(),
            valid,
            country_correct: admin.country,
            region_correct: admin.region,
            city_correct: admin.city,
            distance: dist.distance,
            geoscore: dist.geoscore,
            within_threshold: dist.within_threshold,
            backend_error: None,
        }
    }
}

/// Scores one prediction for both metric families.
pub fn score_sample(
    matcher: &NameMatcher,
    sample_id: &str,
    pred: &Prediction,
    truth: &AdminLabels,
    truth_coord: GeoCoordinate,
    gated: bool,
) -> SampleScore {
    let admin = score_admin_with(matcher, pred, truth, gated);
    let dist = score_distance(pred, truth_coord);
    SampleScore::from_parts(sample_id, pred.valid, admin, dist)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestRef {
    pub config_hash: String,
    pub seed: u64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub recall: f64,
    pub acc_country: f64,
    pub acc_region: f64,
    pub acc_city: f64,
    pub acc_at_km: BTreeMap<u32, f64>,
    pub geoscore_mean: f64,
    pub n_backend_errors: usize,
    pub manifest: ManifestRef,
}

pub const CSV_HEADER: [&str; 13] = [
    "n",
    "recall",
    "acc_country",
    "acc_region",
    "acc_city",
    "acc@1",
    "acc@25",
    "acc@200",
    "acc@750",
    "acc@2500",
    "geoscore_mean",
    "config_hash",
    "seed",
];

/// Aggregates per-sample scores. Every accuracy uses all samples as the
/// denominator; missing coordinates contribute a geoscore of 0.
pub fn aggregate(
    scores: &[SampleScore],
    validity: &[bool],
    manifest: ManifestRef,
) -> Result<EvalReport, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if scores.len() != validity.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            validity: validity.len(),
        });
    }
    let n = scores.len();
    let frac = |count: usize| count as f64 / n as f64;
    let count = |f: &dyn Fn(&SampleScore) -> bool| scores.iter().filter(|s| f(s)).count();

    let acc_at_km = THRESHOLDS_KM
        .iter()
        .map(|&t| (t, frac(count(&|s| s.within_threshold.get(&t).copied().unwrap_or(false)))))
        .collect();

    // Sorted summation keeps the mean independent of sample order.
    let mut gs: Vec<f64> = scores.iter().map(|s| s.geoscore.unwrap_or(0.0)).collect();
    gs.sort_by(f64::total_cmp);
    let geoscore_mean = gs.iter().sum::<f64>() / n as f64;

    Ok(EvalReport {
        n_samples: n,
        recall: frac(validity.iter().filter(|v| **v).count()),
        acc_country: frac(count(&|s| s.country_correct)),
        acc_region: frac(count(&|s| s.region_correct)),
        acc_city: frac(count(&|s| s.city_correct)),
        acc_at_km,
        geoscore_mean,
        n_backend_errors: count(&|s| s.backend_error.is_some()),
        manifest,
    })
}

/// [`aggregate`] using the validity flag stored on each score.
pub fn aggregate_scores(scores: &[SampleScore], manifest: ManifestRef) -> Result<EvalReport, MetricsError> {
    let validity: Vec<bool> = scores.iter().map(|s| s.valid).collect();
    aggregate(scores, &validity, manifest)
}

impl EvalReport {
    pub fn csv_record(&self) -> Vec<String> {
        let mut row = vec![
            self.n_samples.to_string(),
            self.recall.to_string(),
            self.acc_country.to_string(),
            self.acc_region.to_string(),
            self.acc_city.to_string(),
        ];
        for t in THRESHOLDS_KM {
            row.push(self.acc_at_km.get(&t).copied().unwrap_or(0.0).to_string());
        }
        row.push(self.geoscore_mean.to_string());
        row.push(self.manifest.config_hash.clone());
        row.push(self.manifest.seed.to_string());
        row
    }

    pub fn threshold_curve(&self) -> Vec<f64> {
        THRESHOLDS_KM
            .iter()
            .map(|t| self.acc_at_km.get(t).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Writes a header plus one row per report.
pub fn write_reports_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}
