//! File formats for benchmark construction.
//!
//! - countries CSV: `name,area_km2`
//! - cities CSV: `name,country,lat,lon`
//! - pool JSONL: one [`Sample`] per line
//! - benchmark JSONL: one [`BenchmarkEntry`] per line, in selection order

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CityRecord, CountryRecord, Generated, SamplingConfig};
use crate::geo::GeoCoordinate;
use crate::jsonl::{self, JsonlError};
use crate::sample::Sample;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Deserialize)]
struct CityRow {
    name: String,
    country: String,
    lat: f64,
    lon: f64,
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> InputError {
    InputError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_countries(path: &Path) -> Result<Vec<CountryRecord>, InputError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn read_cities(path: &Path) -> Result<Vec<CityRecord>, InputError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<CityRow>().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let center = GeoCoordinate::new(row.lat, row.lon).map_err(|e| csv_err(path, format!("row {}: {e}", i + 2)))?;
        out.push(CityRecord {
            name: row.name,
            country: row.country,
            center,
        });
    }
    Ok(out)
}

pub fn read_pool(path: &Path) -> Result<Vec<Sample>, InputError> {
    Ok(jsonl::read(path)?)
}

/// A selected sample with the city draw that selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    #[serde(flatten)]
    pub sample: Sample,
    pub selected_city: String,
    pub selected_country: String,
    pub city_lat: f64,
    pub city_lon: f64,
    pub center_distance_km: f64,
}

pub fn benchmark_entries(pool: &[Sample], generated: &Generated) -> Vec<BenchmarkEntry> {
    generated
        .selections
        .iter()
        .map(|s| BenchmarkEntry {
            sample: pool[s.pool_index].clone(),
            selected_city: s.city.clone(),
            selected_country: s.country.clone(),
            city_lat: s.city_center.lat(),
            city_lon: s.city_center.lon(),
            center_distance_km: s.center_distance_km,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingManifest {
    pub seed: u64,
    pub config: SamplingConfig,
    pub requested: usize,
    pub selected: usize,
    pub draws: u64,
    pub partial: bool,
    pub counts_per_country: BTreeMap<String, usize>,
    pub excluded_countries: Vec<String>,
}

impl SamplingManifest {
    pub fn new(cfg: &SamplingConfig, generated: &Generated, partial: bool) -> Self {
        SamplingManifest {
            seed: cfg.seed,
            config: cfg.clone(),
            requested: cfg.n_max,
            selected: generated.selections.len(),
            draws: generated.draws,
            partial,
            counts_per_country: generated.counts_per_country(),
            excluded_countries: generated.excluded_countries.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn reads_csv_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let cp = dir.path().join("c.csv");
        std::fs::File::create(&cp).unwrap().write_all(b"name,area_km2\nFrance, 551695\nChile,756102\n").unwrap();
        let ct = dir.path().join("ct.csv");
        std::fs::File::create(&ct).unwrap().write_all(b"name,country,lat,lon\nParis,France,48.8566,2.3522\n").unwrap();
        let countries = read_countries(&cp).unwrap();
        assert_eq!(countries[0].name, "France");
        assert_eq!(countries[1].area_km2, 756102.0);
        let cities = read_cities(&ct).unwrap();
        assert_eq!(cities[0].center.lat(), 48.8566);

        let bad = dir.path().join("bad.csv");
        std::fs::File::create(&bad).unwrap().write_all(b"name,country,lat,lon\nX,Y,95,0\n").unwrap();
        let err = read_cities(&bad).unwrap_err().to_string();
        assert!(err.contains("bad.csv") && err.contains("latitude"), "{err}");
        assert!(read_countries(&dir.path().join("missing.csv")).unwrap_err().to_string().contains("missing.csv"));
    }
}
