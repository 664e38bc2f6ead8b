//! Benchmark samples: the unit shared by the sampler, the harness and datagen.

use serde::{Deserialize, Serialize};

use crate::geo::{AdminLabels, GeoCoordinate};

/// One benchmark item. Serializes flat:
/// `{"sample_id", "image_path", "country", "region", "city", "lat", "lon", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    #[serde(default)]
    pub image_path: String,
    #[serde(flatten)]
    pub labels: AdminLabels,
    #[serde(flatten)]
    pub coord: GeoCoordinate,
    /// Guiding question for the `+Q` / `+QA` prompt modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guiding_question: Option<String>,
    /// Effective answer to the guiding question for `+QA`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guiding_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_dataset: Option<String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, labels: AdminLabels, coord: GeoCoordinate) -> Self {
        let id = id.into();
        Sample {
            image_path: format!("{id}.jpg"),
            sample_id: id,
            labels,
            coord,
            guiding_question: None,
            guiding_answer: None,
            source_dataset: None,
        }
    }

    pub fn truth(&self) -> Truth {
        Truth {
            labels: self.labels.clone(),
            coord: Some(self.coord),
        }
    }
}

/// Ground truth bound to a conversation; mock backends answer from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    #[serde(flatten)]
    pub labels: AdminLabels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord: Option<GeoCoordinate>,
}
