//! Latitude/longitude bucket index for radius queries.

use std::collections::HashMap;

use crate::exec::Exec;
use crate::geo::{haversine, GeoCoordinate, EARTH_RADIUS_KM};

const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Buckets point indices into a regular grid whose cell edge is at least
/// the query radius. Row and column counts divide 180 and 360 degrees
/// exactly so that column wrap-around at the antimeridian is exact.
#[derive(Debug, Clone)]
pub struct GridIndex {
    points: Vec<GeoCoordinate>,
    rows: i64,
    cols: i64,
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl GridIndex {
    pub fn build(points: Vec<GeoCoordinate>, cell_km: f64, exec: Exec) -> Self {
        let target_deg = (cell_km / KM_PER_DEGREE).clamp(1e-4, 180.0);
        let rows = (180.0 / target_deg).floor().max(1.0) as i64;
        let cols = (360.0 / target_deg).floor().max(1.0) as i64;
        let mut index = GridIndex {
            points,
            rows,
            cols,
            cell_lat: 180.0 / rows as f64,
            cell_lon: 360.0 / cols as f64,
            cells: HashMap::new(),
        };
        let keys = exec.map(&index.points, |p| index.cell_of(*p));
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, key) in keys.into_iter().enumerate() {
            cells.entry(key).or_default().push(i as u32);
        }
        index.cells = cells;
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> GeoCoordinate {
        self.points[i]
    }

    fn row(&self, lat: f64) -> i64 {
        (((lat + 90.0) / self.cell_lat).floor() as i64).clamp(0, self.rows - 1)
    }

    fn col(&self, lon: f64) -> i64 {
        (((lon + 180.0) / self.cell_lon).floor() as i64).rem_euclid(self.cols)
    }

    fn cell_of(&self, p: GeoCoordinate) -> (i64, i64) {
        (self.row(p.lat()), self.col(p.lon()))
    }

    /// Indices of all points within `radius_km` (inclusive) of `center`,
    /// ascending.
    pub fn within(&self, center: GeoCoordinate, radius_km: f64) -> Vec<usize> {
        let dlat = radius_km / KM_PER_DEGREE + 1e-9;
        let lat_lo = center.lat() - dlat;
        let lat_hi = center.lat() + dlat;
        let r0 = self.row(lat_lo.max(-90.0));
        let r1 = self.row(lat_hi.min(90.0));
        let max_abs_lat = center.lat().abs() + dlat;
        let all_cols = max_abs_lat >= 89.999 || {
            let dlon = dlat / max_abs_lat.to_radians().cos();
            dlon * 2.0 >= 360.0 - self.cell_lon
        };
        let col_range: Vec<i64> = if all_cols {
            (0..self.cols).collect()
        } else {
            let dlon = dlat / max_abs_lat.to_radians().cos();
            let c0 = ((center.lon() - dlon + 180.0) / self.cell_lon).floor() as i64;
            let c1 = ((center.lon() + dlon + 180.0) / self.cell_lon).floor() as i64;
            let mut cs: Vec<i64> = (c0..=c1).map(|c| c.rem_euclid(self.cols)).collect();
            cs.sort_unstable();
            cs.dedup();
            cs
        };
        let mut hits = Vec::new();
        for r in r0..=r1 {
            for &c in &col_range {
                if let Some(bucket) = self.cells.get(&(r, c)) {
                    for &i in bucket {
                        if haversine(center, self.points[i as usize]).km() <= radius_km {
                            hits.push(i as usize);
                        }
                    }
                }
            }
        }
        hits.sort_unstable();
        hits
    }
}
