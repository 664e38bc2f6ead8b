//! Coordinates, great-circle distance and the GeoGuessr-style score.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Mean Earth radius in kilometers used by every distance computation.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Decay constant (km) of the proximity score.
pub const GEOSCORE_DECAY_KM: f64 = 1492.7;

/// Score awarded at zero distance.
pub const GEOSCORE_MAX: f64 = 5000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude out of range: {0}")]
    LatitudeOutOfRange(f64),
    #[error("longitude out of range: {0}")]
    LongitudeOutOfRange(f64),
    #[error("coordinate component is not finite")]
    NonFinite,
    #[error("distance must be a finite non-negative number of kilometers, got {0}")]
    InvalidDistance(f64),
}

/// A latitude/longitude pair in decimal degrees.
///
/// Construction validates the ranges, so every value of this type is usable
/// by [`haversine`] without further checks. Longitudes of -180 and +180 are
/// both accepted and stored as given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoordinate", into = "RawCoordinate")]
pub struct GeoCoordinate {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawCoordinate {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawCoordinate> for GeoCoordinate {
    type Error = GeoError;
    fn try_from(raw: RawCoordinate) -> Result<Self, GeoError> {
        GeoCoordinate::new(raw.lat, raw.lon)
    }
}

impl From<GeoCoordinate> for RawCoordinate {
    fn from(c: GeoCoordinate) -> Self {
        RawCoordinate { lat: c.lat, lon: c.lon }
    }
}

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Point reached by travelling `distance_km` along the great circle that
    /// leaves `self` at `bearing_deg` (clockwise from north).
    pub fn destination(&self, bearing_deg: f64, distance_km: f64) -> GeoCoordinate {
        let delta = distance_km / EARTH_RADIUS_KM;
        let theta = bearing_deg.to_radians();
        let phi1 = self.lat.to_radians();
        let lambda1 = self.lon.to_radians();
        let sin_phi2 = phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos();
        let phi2 = sin_phi2.clamp(-1.0, 1.0).asin();
        let lambda2 = lambda1
            + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);
        let lat = phi2.to_degrees().clamp(-90.0, 90.0);
        let mut lon = lambda2.to_degrees();
        lon = (lon + 540.0).rem_euclid(360.0) - 180.0;
        GeoCoordinate { lat, lon }
    }
}

impl fmt::Display for GeoCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// A non-negative distance in kilometers.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DistanceKm(f64);

impl DistanceKm {
    pub fn new(km: f64) -> Result<Self, GeoError> {
        if km.is_finite() && km >= 0.0 {
            Ok(Self(km))
        } else {
            Err(GeoError::InvalidDistance(km))
        }
    }

    pub fn km(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for DistanceKm {
    type Error = GeoError;
    fn try_from(v: f64) -> Result<Self, GeoError> {
        DistanceKm::new(v)
    }
}

impl From<DistanceKm> for f64 {
    fn from(d: DistanceKm) -> f64 {
        d.0
    }
}

/// Great-circle distance using the half-angle (atan2) haversine form.
pub fn haversine(a: GeoCoordinate, b: GeoCoordinate) -> DistanceKm {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s_phi = (dphi / 2.0).sin();
    let s_lambda = (dlambda / 2.0).sin();
    let h = (s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda).clamp(0.0, 1.0);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    DistanceKm(EARTH_RADIUS_KM * c)
}

/// `5000 * exp(-d / 1492.7)` with `d` in kilometers. No upper distance cap.
pub fn geoscore(delta: DistanceKm) -> f64 {
    GEOSCORE_MAX * (-delta.0 / GEOSCORE_DECAY_KM).exp()
}

/// [`geoscore`] over an unchecked kilometer value.
pub fn geoscore_km(km: f64) -> Result<f64, GeoError> {
    DistanceKm::new(km).map(geoscore)
}

/// Hierarchical administrative labels. Empty region/city means unknown.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdminLabels {
    pub country: String,
    #[serde(default)]
    pub region: String,
    #[serde(default)]
    pub city: String,
}

impl AdminLabels {
    pub fn new(country: impl Into<String>, region: impl Into<String>, city: impl Into<String>) -> Self {
        Self {
            country: country.into(),
            region: region.into(),
            city: city.into(),
        }
    }

    pub fn is_complete(&self) -> bool {
        !self.country.trim().is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(lat: f64, lon: f64) -> GeoCoordinate {
        GeoCoordinate::new(lat, lon).unwrap()
    }

    #[test]
    fn identity_is_exactly_zero() {
        assert_eq!(haversine(c(0.0, 0.0), c(0.0, 0.0)).km(), 0.0);
        assert_eq!(haversine(c(47.6069, -122.3283), c(47.6069, -122.3283)).km(), 0.0);
    }

    #[test]
    fn antipodal_is_half_circumference() {
        let d = haversine(c(0.0, 0.0), c(0.0, 180.0)).km();
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((d - 20015.09).abs() < 0.01);
    }

    #[test]
    fn dateline_endpoints_coincide() {
        assert!(haversine(c(10.0, 180.0), c(10.0, -180.0)).km() < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_and_non_finite() {
        assert_eq!(GeoCoordinate::new(90.5, 0.0), Err(GeoError::LatitudeOutOfRange(90.5)));
        assert_eq!(GeoCoordinate::new(0.0, -180.1), Err(GeoError::LongitudeOutOfRange(-180.1)));
        assert_eq!(GeoCoordinate::new(f64::NAN, 0.0), Err(GeoError::NonFinite));
        assert_eq!(GeoCoordinate::new(0.0, f64::INFINITY), Err(GeoError::NonFinite));
        assert!(serde_json::from_str::<GeoCoordinate>(r#"{"lat":91,"lon":0}"#).is_err());
    }

    #[test]
    fn geoscore_closed_form() {
        assert_eq!(geoscore(DistanceKm::new(0.0).unwrap()), 5000.0);
        let at_decay = geoscore(DistanceKm::new(1492.7).unwrap());
        assert!((at_decay - 5000.0 / std::f64::consts::E).abs() / at_decay < 1e-12);
        assert!(geoscore_km(-1.0).is_err());
        assert!(geoscore_km(f64::NAN).is_err());
    }

    #[test]
    fn destination_round_trips_through_haversine() {
        let start = c(47.6069, -122.3283);
        for &(bearing, dist) in &[(90.0, 30.0), (0.0, 25.0), (225.0, 1000.0), (17.0, 0.5)] {
            let end = start.destination(bearing, dist);
            assert!((haversine(start, end).km() - dist).abs() < 1e-9 * dist.max(1.0));
        }
    }
}
