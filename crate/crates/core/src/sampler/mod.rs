//! Globally balanced benchmark construction.
//!
//! Countries are drawn with probability `0.5 * area_share + 0.5 / n`, a city
//! is drawn uniformly within the chosen country, and every pool coordinate
//! within the radius of that city's center that is not yet selected is
//! added. Draws repeat until `n_max` samples are collected or the draw
//! budget runs out.
//!
//! Randomness: two ChaCha8 streams derived from the config seed with
//! [`crate::seed::derive`] under the labels `"sampler/country"` and
//! `"sampler/city"`. A country draw takes one `f64` in `[0, 1)` and inverts
//! the cumulative distribution (first index whose cumulative weight exceeds
//! the draw). A city draw takes one `random_range(0..n)`.

mod grid;
pub mod io;

pub use grid::GridIndex;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::geo::{haversine, GeoCoordinate};
use crate::metrics::normalize_name;
use crate::sample::Sample;
use crate::seed;

pub const DEFAULT_RADIUS_KM: f64 = 5.0;
pub const DEFAULT_DRAW_BUDGET_FACTOR: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryRecord {
    pub name: String,
    pub area_km2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityRecord {
    pub name: String,
    pub country: String,
    #[serde(flatten)]
    pub center: GeoCoordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_max: usize,
    pub radius_km: f64,
    pub seed: u64,
    /// Maximum samples any single city may contribute over the whole run.
    pub per_city_cap: Option<usize>,
    /// Draw budget is `budget_factor * n_max`.
    pub budget_factor: u64,
}

impl SamplingConfig {
    pub fn new(n_max: usize, seed: u64) -> Self {
        SamplingConfig {
            n_max,
            radius_km: DEFAULT_RADIUS_KM,
            seed,
            per_city_cap: None,
            budget_factor: DEFAULT_DRAW_BUDGET_FACTOR,
        }
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("country list is empty")]
    NoCountries,
    #[error("country {0:?} has non-positive or non-finite area")]
    BadArea(String),
    #[error("country {0:?} is listed more than once")]
    DuplicateCountry(String),
    #[error("no listed country has any city")]
    NoCities,
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("duplicate sample_id in pool: {0}")]
    DuplicateSample(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("draw budget of {draws} exhausted with {} of {wanted} samples collected", .collected.selections.len())]
    Partial {
        collected: Box<Generated>,
        draws: u64,
        wanted: usize,
    },
}

/// Mixed area/uniform country probabilities, aligned with the input order.
pub fn compute_prob(countries: &[CountryRecord]) -> Result<Vec<f64>, SamplerError> {
    if countries.is_empty() {
        return Err(SamplerError::NoCountries);
    }
    for c in countries {
        if !(c.area_km2.is_finite() && c.area_km2 > 0.0) {
            return Err(SamplerError::BadArea(c.name.clone()));
        }
    }
    let total: f64 = countries.iter().map(|c| c.area_km2).sum();
    let n = countries.len() as f64;
    Ok(countries
        .iter()
        .map(|c| 0.5 * (c.area_km2 / total) + 0.5 / n)
        .collect())
}

/// Inverse-CDF sampler over a fixed probability vector.
#[derive(Debug, Clone)]
pub struct CountryDraw {
    cdf: Vec<f64>,
}

impl CountryDraw {
    pub fn new(probs: &[f64]) -> Self {
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        CountryDraw { cdf }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// Returns the country stream used by [`generate`], for frequency checks.
pub fn country_rng(seed: u64) -> ChaCha8Rng {
    seed::rng(seed, "sampler/country")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub pool_index: usize,
    pub sample_id: String,
    pub country: String,
    pub city: String,
    pub city_center: GeoCoordinate,
    pub center_distance_km: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub selections: Vec<Selection>,
    pub draws: u64,
    /// Listed countries that have no city and were left out of the draw.
    pub excluded_countries: Vec<String>,
}

impl Generated {
    pub fn sample_ids(&self) -> Vec<&str> {
        self.selections.iter().map(|s| s.sample_id.as_str()).collect()
    }

    pub fn counts_per_country(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for s in &self.selections {
            *m.entry(s.country.clone()).or_insert(0) += 1;
        }
        m
    }
}

pub fn generate(
    countries: &[CountryRecord],
    cities: &[CityRecord],
    pool: &[Sample],
    cfg: &SamplingConfig,
    exec: Exec,
) -> Result<Generated, SamplerError> {
    if cfg.n_max == 0 {
        return Err(SamplerError::Config("n_max must be positive".into()));
    }
    if !(cfg.radius_km.is_finite() && cfg.radius_km > 0.0) {
        return Err(SamplerError::Config("radius_km must be positive".into()));
    }
    if pool.is_empty() {
        return Err(SamplerError::EmptyPool);
    }
    let mut ids = HashSet::new();
    for s in pool {
        if !ids.insert(s.sample_id.as_str()) {
            return Err(SamplerError::DuplicateSample(s.sample_id.clone()));
        }
    }
    let mut seen = HashSet::new();
    for c in countries {
        if !seen.insert(normalize_name(&c.name)) {
            return Err(SamplerError::DuplicateCountry(c.name.clone()));
        }
    }
    compute_prob(countries)?;

    let mut by_country: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, city) in cities.iter().enumerate() {
        by_country.entry(normalize_name(&city.country)).or_default().push(i);
    }
    let (active, excluded): (Vec<&CountryRecord>, Vec<&CountryRecord>) = countries
        .iter()
        .partition(|c| by_country.contains_key(&normalize_name(&c.name)));
    if active.is_empty() {
        return Err(SamplerError::NoCities);
    }
    let active: Vec<CountryRecord> = active.into_iter().cloned().collect();
    let probs = compute_prob(&active)?;
    let draw = CountryDraw::new(&probs);
    let city_lists: Vec<&Vec<usize>> = active
        .iter()
        .map(|c| &by_country[&normalize_name(&c.name)])
        .collect();

    let index = GridIndex::build(pool.iter().map(|s| s.coord).collect(), cfg.radius_km, exec);
    let mut country_rng = country_rng(cfg.seed);
    let mut city_rng = seed::rng(cfg.seed, "sampler/city");
    let budget = cfg.budget_factor.saturating_mul(cfg.n_max as u64);

    let mut out = Generated {
        excluded_countries: excluded.iter().map(|c| c.name.clone()).collect(),
        ..Default::default()
    };
    let mut taken = vec![false; pool.len()];
    let mut per_city: HashMap<usize, usize> = HashMap::new();

    while out.selections.len() < cfg.n_max {
        if out.draws >= budget {
            let draws = out.draws;
            return Err(SamplerError::Partial {
                collected: Box::new(out),
                draws,
                wanted: cfg.n_max,
            });
        }
        out.draws += 1;
        let ci = draw.draw(&mut country_rng);
        let list = city_lists[ci];
        let city_idx = list[city_rng.random_range(0..list.len())];
        let city = &cities[city_idx];
        let used = per_city.entry(city_idx).or_insert(0);
        for pi in index.within(city.center, cfg.radius_km) {
            if out.selections.len() >= cfg.n_max {
                break;
            }
            if cfg.per_city_cap.is_some_and(|cap| *used >= cap) {
                break;
            }
            if taken[pi] {
                continue;
            }
            taken[pi] = true;
            *used += 1;
            out.selections.push(Selection {
                pool_index: pi,
                sample_id: pool[pi].sample_id.clone(),
                country: active[ci].name.clone(),
                city: city.name.clone(),
                city_center: city.center,
                center_distance_km: haversine(city.center, pool[pi].coord).km(),
            });
        }
    }
    Ok(out)
}
