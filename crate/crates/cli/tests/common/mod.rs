#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geobench::sample::Sample;
use geobench::{AdminLabels, GeoCoordinate};

pub struct City {
    pub country: &'static str,
    pub area_km2: f64,
    pub region: &'static str,
    pub city: &'static str,
    pub lat: f64,
    pub lon: f64,
}

pub const WORLD: [City; 3] = [
    City { country: "Brazil", area_km2: 8_515_767.0, region: "Distrito Federal", city: "Brasilia", lat: -15.7939, lon: -47.8828 },
    City { country: "France", area_km2: 643_801.0, region: "Ile-de-France", city: "Paris", lat: 48.8566, lon: 2.3522 },
    City { country: "Japan", area_km2: 377_975.0, region: "Tokyo", city: "Tokyo", lat: 35.6762, lon: 139.6503 },
];

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_geobench"));
    c.env_remove("GEOBENCH_CONFIG");
    c
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn geobench")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "geobench {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Samples placed on rings around a city center, all within `max_km`.
pub fn samples_near(c: &City, n: usize, max_km: f64, prefix: &str) -> Vec<Sample> {
    let center = GeoCoordinate::new(c.lat, c.lon).unwrap();
    (0..n)
        .map(|i| {
            let km = max_km * (i % 5) as f64 / 5.0;
            let p = center.destination(37.0 * i as f64, km);
            let mut s = Sample::new(format!("{prefix}{i:03}"), AdminLabels::new(c.country, c.region, c.city), p);
            s.source_dataset = Some("fixture".into());
            s
        })
        .collect()
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) {
    geobench::jsonl::write(path, samples).unwrap();
}

/// Writes countries.csv, cities.csv and pool.jsonl for `world` into `dir`.
pub fn write_world(dir: &Path, world: &[City], per_city: usize) -> [PathBuf; 3] {
    let mut countries = String::from("name,area_km2\n");
    let mut cities = String::from("name,country,lat,lon\n");
    let mut pool = Vec::new();
    for c in world {
        countries.push_str(&format!("{},{}\n", c.country, c.area_km2));
        cities.push_str(&format!("{},{},{},{}\n", c.city, c.country, c.lat, c.lon));
        pool.extend(samples_near(c, per_city, 4.0, &c.country[..2].to_lowercase()));
    }
    let paths = [dir.join("countries.csv"), dir.join("cities.csv"), dir.join("pool.jsonl")];
    std::fs::write(&paths[0], countries).unwrap();
    std::fs::write(&paths[1], cities).unwrap();
    write_jsonl(&paths[2], &pool);
    paths
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
