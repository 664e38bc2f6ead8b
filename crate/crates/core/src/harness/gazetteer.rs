//! Nested country -> region -> city name index for hierarchical prompts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::metrics::{normalize_name, NameMatcher};
use crate::sample::Sample;

/// File form: `{"Country": {"Region": ["City", ...]}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gazetteer {
    countries: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

fn sorted_names<'a, I: IntoIterator<Item = &'a String>>(names: I) -> Vec<String> {
    let mut v: Vec<String> = names.into_iter().cloned().collect();
    v.sort_by_key(|n| (normalize_name(n), n.clone()));
    v
}

fn find_key<V>(map: &BTreeMap<String, V>, name: &str) -> Option<String> {
    let k = normalize_name(name);
    map.keys().find(|m| normalize_name(m) == k).cloned()
}

impl Gazetteer {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let raw: Gazetteer =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        // Re-insert to collapse normalization duplicates.
        let mut g = Gazetteer::default();
        for (c, regions) in &raw.countries {
            g.insert(c, "", "");
            for (r, cities) in regions {
                g.insert(c, r, "");
                for city in cities {
                    g.insert(c, r, city);
                }
            }
        }
        Ok(g)
    }

    pub fn from_samples<'a, I: IntoIterator<Item = &'a Sample>>(samples: I) -> Self {
        let mut g = Gazetteer::default();
        for s in samples {
            g.insert(&s.labels.country, &s.labels.region, &s.labels.city);
        }
        g
    }

    pub fn insert(&mut self, country: &str, region: &str, city: &str) {
        if country.trim().is_empty() {
            return;
        }
        let ck = find_key(&self.countries, country).unwrap_or_else(|| country.trim().to_string());
        let regions = self.countries.entry(ck).or_default();
        if region.trim().is_empty() {
            return;
        }
        let rk = find_key(regions, region).unwrap_or_else(|| region.trim().to_string());
        let cities = regions.entry(rk).or_default();
        if city.trim().is_empty() {
            return;
        }
        let key = normalize_name(city);
        if !cities.iter().any(|c| normalize_name(c) == key) {
            cities.push(city.trim().to_string());
        }
    }

    pub fn countries(&self) -> Vec<String> {
        sorted_names(self.countries.keys())
    }

    pub fn regions(&self, country: &str) -> Vec<String> {
        find_key(&self.countries, country)
            .map(|k| sorted_names(self.countries[&k].keys()))
            .unwrap_or_default()
    }

    pub fn cities(&self, country: &str, region: &str) -> Vec<String> {
        let Some(ck) = find_key(&self.countries, country) else {
            return Vec::new();
        };
        let regions = &self.countries[&ck];
        find_key(regions, region)
            .map(|rk| sorted_names(regions[&rk].iter()))
            .unwrap_or_default()
    }

    /// Errors when any sample's truth labels are missing from the index.
    pub fn check_covers(&self, samples: &[Sample], matcher: &NameMatcher) -> Result<(), HarnessError> {
        for s in samples {
            let l = &s.labels;
            let missing = |what: &str, name: &str| {
                HarnessError::Config(format!("gazetteer lacks {what} {name:?} of sample {}", s.sample_id))
            };
            let countries = self.countries();
            if !countries.iter().any(|c| matcher.same(c, &l.country)) {
                return Err(missing("country", &l.country));
            }
            if !l.region.is_empty() {
                if !self.regions(&l.country).iter().any(|r| matcher.same(r, &l.region)) {
                    return Err(missing("region", &l.region));
                }
                if !l.city.is_empty() && !self.cities(&l.country, &l.region).iter().any(|c| matcher.same(c, &l.city)) {
                    return Err(missing("city", &l.city));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{AdminLabels, GeoCoordinate};

    fn s(id: &str, c: &str, r: &str, city: &str) -> Sample {
        Sample::new(id, AdminLabels::new(c, r, city), GeoCoordinate::new(0.0, 0.0).unwrap())
    }

    #[test]
    fn builds_sorted_nested_lists() {
        let g = Gazetteer::from_samples(&[
            s("1", "United States", "Washington", "Seattle"),
            s("2", "united states", "Oregon", "Portland"),
            s("3", "France", "Île-de-France", "Paris"),
            s("4", "United States", "Washington", "Spokane"),
            s("5", "United States", "washington", "seattle"),
        ]);
        assert_eq!(g.countries(), vec!["France", "United States"]);
        assert_eq!(g.regions("United States"), vec!["Oregon", "Washington"]);
        assert_eq!(g.cities("United States", "Washington"), vec!["Seattle", "Spokane"]);
        assert!(g.regions("Chile").is_empty());
    }

    #[test]
    fn coverage_check() {
        let g = Gazetteer::from_samples(&[s("1", "France", "Normandy", "Rouen")]);
        let m = NameMatcher::default();
        assert!(g.check_covers(&[s("x", "France", "Normandy", "Rouen")], &m).is_ok());
        assert!(g.check_covers(&[s("x", "France", "Brittany", "")], &m).is_err());
        assert!(g.check_covers(&[s("x", "Spain", "", "")], &m).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        std::fs::write(&p, r#"{"Chile": {"Santiago Metropolitan": ["Santiago"]}, "Peru": {}}"#).unwrap();
        let g = Gazetteer::load(&p).unwrap();
        assert_eq!(g.countries(), vec!["Chile", "Peru"]);
        assert_eq!(g.cities("chile", "santiago metropolitan"), vec!["Santiago"]);
    }
}
