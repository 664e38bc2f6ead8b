//! Toolkit for benchmarking image geolocation with multimodal chat models.

pub mod datagen;
pub mod exec;
pub mod geo;
pub mod harness;
pub mod jsonl;
pub mod metrics;
pub mod model;
pub mod parser;
pub mod sample;
pub mod sampler;
pub mod seed;
pub mod session;

pub use geo::{geoscore, haversine, AdminLabels, DistanceKm, GeoCoordinate, GeoError};
pub use metrics::{EvalReport, Prediction, SampleScore};
pub use sample::{Sample, Truth};
