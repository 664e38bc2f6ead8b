mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::Stdio;
use std::time::{Duration, Instant};

use common::*;
use geobench::sample::Sample;
use geobench::AdminLabels;

fn sample_into(dir: &Path, out: &str, extra: &[&str]) -> String {
    let mut args = vec![
        "sample", "--countries", "countries.csv", "--cities", "cities.csv", "--pool", "pool.jsonl", "--n", "12", "--seed", "11", "--out", out,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args)
}

#[test]
fn sample_is_deterministic_across_execution_modes() {
    let tmp = tempfile::tempdir().unwrap();
    write_world(tmp.path(), &WORLD, 10);
    sample_into(tmp.path(), "a", &[]);
    sample_into(tmp.path(), "b", &["--parallelism", "1"]);
    let a = std::fs::read(tmp.path().join("a/benchmark.jsonl")).unwrap();
    let b = std::fs::read(tmp.path().join("b/benchmark.jsonl")).unwrap();
    assert_eq!(a, b);
    let sampling = read_json(&tmp.path().join("a/sampling.json"));
    assert_eq!(sampling["selected"], 12);
    let manifest = read_json(&tmp.path().join("a/manifest.json"));
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["outputs"]["benchmark.jsonl"].is_string());
}

#[test]
fn per_city_cap_limits_each_city() {
    let tmp = tempfile::tempdir().unwrap();
    write_world(tmp.path(), &WORLD, 10);
    sample_into(tmp.path(), "capped", &["--per-city-cap", "2", "--allow-partial"]);
    let rows: Vec<serde_json::Value> = geobench::jsonl::read(&tmp.path().join("capped/benchmark.jsonl")).unwrap();
    let mut per_city = std::collections::BTreeMap::<String, usize>::new();
    for r in &rows {
        *per_city.entry(r["selected_city"].as_str().unwrap().to_string()).or_default() += 1;
    }
    assert!(per_city.values().all(|&n| n <= 2), "{per_city:?}");
    assert_eq!(rows.len(), per_city.values().sum::<usize>());
}

#[test]
fn partial_sampling_is_an_error_unless_allowed() {
    let tmp = tempfile::tempdir().unwrap();
    write_world(tmp.path(), &WORLD, 2);
    let out = run(
        tmp.path(),
        &["sample", "--countries", "countries.csv", "--cities", "cities.csv", "--pool", "pool.jsonl", "--n", "50", "--out", "p"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("p/benchmark.jsonl").exists());
}

#[test]
fn missing_input_exits_2_and_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    write_world(tmp.path(), &WORLD, 3);
    let out = run(
        tmp.path(),
        &["sample", "--countries", "nowhere.csv", "--cities", "cities.csv", "--pool", "pool.jsonl", "--n", "3", "--out", "x"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn config_file_supplies_values_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    write_world(tmp.path(), &WORLD, 10);
    std::fs::write(tmp.path().join("geo.toml"), "seed = 11\nradius_km = 5.0\n").unwrap();
    ok(
        tmp.path(),
        &["--config", "geo.toml", "sample", "--countries", "countries.csv", "--cities", "cities.csv", "--pool", "pool.jsonl", "--n", "12", "--out", "c"],
    );
    sample_into(tmp.path(), "d", &[]);
    assert_eq!(
        std::fs::read(tmp.path().join("c/benchmark.jsonl")).unwrap(),
        std::fs::read(tmp.path().join("d/benchmark.jsonl")).unwrap()
    );
    std::fs::write(tmp.path().join("bad.toml"), "sed = 1\n").unwrap();
    let out = run(tmp.path(), &["--config", "bad.toml", "review", "--store", "."]);
    assert_eq!(out.status.code(), Some(2));
}

fn fixture_benchmark(dir: &Path) {
    let mut samples = samples_near(&WORLD[0], 3, 3.0, "br");
    samples.extend(samples_near(&WORLD[1], 3, 3.0, "fr"));
    write_jsonl(&dir.join("bench.jsonl"), &samples);
}

fn report(dir: &Path, run: &str) -> serde_json::Value {
    read_json(&dir.join(run).join("report.json"))
}

#[test]
fn oracle_eval_reports_all_ones() {
    let tmp = tempfile::tempdir().unwrap();
    fixture_benchmark(tmp.path());
    for mode in ["dire", "hier"] {
        let stdout = ok(tmp.path(), &["eval", "--benchmark", "bench.jsonl", "--mode", mode, "--backend", "oracle", "--out", mode]);
        assert!(stdout.contains("5000.00"));
        let r = report(tmp.path(), mode);
        for key in ["recall", "acc_country", "acc_region", "acc_city"] {
            assert_eq!(r[key], 1.0, "{mode} {key}");
        }
        for (_, v) in r["acc_at_km"].as_object().unwrap() {
            assert_eq!(*v, 1.0);
        }
        assert_eq!(r["geoscore_mean"], 5000.0);
    }
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    fixture_benchmark(tmp.path());
    let out = run(tmp.path(), &["eval", "--benchmark", "bench.jsonl", "--mode", "sideways", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sideways"));
}

#[test]
fn scripted_wrong_country_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = AdminLabels::new("United States", "Washington", "Seattle");
    let seattle = geobench::GeoCoordinate::new(47.6069, -122.3283).unwrap();
    let samples: Vec<Sample> = (0..4)
        .map(|i| Sample::new(format!("us{i}"), labels.clone(), seattle.destination(90.0 * i as f64, i as f64)))
        .collect();
    write_jsonl(&tmp.path().join("us.jsonl"), &samples);
    std::fs::write(
        tmp.path().join("france.json"),
        r#"{"id": "always-france", "default": "{\"country\": \"France\", \"region\": \"Washington\", \"city\": \"Seattle\", \"lat\": \"48.8566\", \"lon\": \"2.3522\"}"}"#,
    )
    .unwrap();
    ok(tmp.path(), &["eval", "--benchmark", "us.jsonl", "--mode", "dire", "--backend", "scripted:france.json", "--out", "fr"]);
    let r = report(tmp.path(), "fr");
    assert_eq!(r["recall"], 1.0);
    for key in ["acc_country", "acc_region", "acc_city"] {
        assert_eq!(r[key], 0.0, "{key}");
    }
    ok(tmp.path(), &["eval", "--benchmark", "us.jsonl", "--mode", "dire", "--backend", "scripted:france.json", "--ungated", "--out", "fru"]);
    assert_eq!(report(tmp.path(), "fru")["acc_city"], 1.0);
}

#[test]
fn constant_backend_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    fixture_benchmark(tmp.path());
    ok(tmp.path(), &["eval", "--benchmark", "bench.jsonl", "--mode", "dire", "--backend", "constant:hello", "--out", "c"]);
    let r = report(tmp.path(), "c");
    assert_eq!(r["recall"], 0.0);
    assert_eq!(r["acc_country"], 0.0);
    assert_eq!(r["geoscore_mean"], 0.0);
}

#[test]
fn report_merges_runs_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    fixture_benchmark(tmp.path());
    ok(tmp.path(), &["eval", "--benchmark", "bench.jsonl", "--mode", "dire", "--out", "r1"]);
    ok(tmp.path(), &["eval", "--benchmark", "bench.jsonl", "--mode", "hier", "--backend", "first-candidate", "--out", "r2"]);
    let table = ok(tmp.path(), &["report", "r1", "r2", "--out", "merged/table.csv"]);
    assert!(table.contains("r1") && table.contains("r2"));
    let csv = std::fs::read_to_string(tmp.path().join("merged/table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("n,recall,acc_country"));

    ok(tmp.path(), &["replay", "r1/manifest.json", "--out", "r1b"]);
    assert_eq!(
        std::fs::read(tmp.path().join("r1/scores.jsonl")).unwrap(),
        std::fs::read(tmp.path().join("r1b/scores.jsonl")).unwrap()
    );
    ok(tmp.path(), &["replay", "merged/table.csv.manifest.json"]);

    std::fs::write(tmp.path().join("bench.jsonl"), "").unwrap();
    let out = run(tmp.path(), &["replay", "r1/manifest.json", "--out", "r1c"]);
    assert_eq!(out.status.code(), Some(2), "changed input must be refused");
}

const COT_SCRIPT: &str = r#"{"id": "cot-script", "rules": [
 {"contains": "prediction is incorrect", "reply": "Q1: Which side of the road?\nA1: Right.\nQ2: What script?\nA2: Latin.\nQ3: What plants?\nA3: Tropical.\nQ4: Coordinates?\nA4: {({lat}, {lon})}"},
 {"contains": "questioner", "reply": "Q1: Which side of the road?\nA1: Right.\nQ2: What script?\nA2: Latin.\nQ3: What plants?\nA3: Temperate.\nQ4: Coordinates?\nA4: {(10.0, 10.0)}"},
 {"contains": "Reply in the form", "reply": "Clues: [2]; rephrasing: red soil by the road"}]}"#;

fn datagen_fixture(dir: &Path) {
    fixture_benchmark(dir);
    std::fs::write(dir.join("cot.json"), COT_SCRIPT).unwrap();
    std::fs::write(
        dir.join("clues.csv"),
        "country,clue_text,source_url\nBrazil,Yellow plates,u\nBrazil,Red soil,u\nFrance,Dashed lines,u\nFrance,Bollards,u\nAtlantis,Sea,u\n",
    )
    .unwrap();
    std::fs::write(dir.join("known.csv"), "name,area_km2\nBrazil,1\nFrance,1\n").unwrap();
}

#[test]
fn datagen_clues_then_review() {
    let tmp = tempfile::tempdir().unwrap();
    datagen_fixture(tmp.path());
    let args = [
        "datagen", "clues", "--samples", "bench.jsonl", "--clues", "clues.csv", "--known-countries", "known.csv", "--backend", "scripted:cot.json",
        "--out", "store",
    ];
    let first = ok(tmp.path(), &args);
    assert!(first.contains("1 entries set aside"), "{first}");
    let second = ok(tmp.path(), &args);
    assert!(second.contains("(6 already done)"), "{second}");

    let listed = ok(tmp.path(), &["review", "--store", "store", "list", "--status", "unreviewed"]);
    assert_eq!(listed.lines().count(), 6);
    assert!(listed.contains("[2]"));
    ok(tmp.path(), &["review", "--store", "store", "approve", "br000"]);
    ok(tmp.path(), &["review", "--store", "store", "reject", "br001", "--reason", "wrong soil"]);
    let out = run(tmp.path(), &["review", "--store", "store", "approve", "br001"]);
    assert_eq!(out.status.code(), Some(1));
    let approved = ok(tmp.path(), &["review", "--store", "store", "list", "--status", "approved"]);
    assert!(approved.starts_with("br000\tapproved"));
    let out = run(tmp.path(), &["review", "--store", "missing", "list"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn datagen_dialogs_introspect_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    datagen_fixture(tmp.path());
    let stdout = ok(tmp.path(), &["datagen", "dialogs", "--samples", "bench.jsonl", "--backend", "scripted:cot.json", "--out", "store"]);
    assert!(stdout.contains("introspected: 6"), "{stdout}");
    let records: Vec<serde_json::Value> = geobench::jsonl::read(&tmp.path().join("store/dialogs.jsonl")).unwrap();
    assert_eq!(records.len(), 6);
    ok(tmp.path(), &["replay", "store/manifest-dialogs.json", "--out", "again"]);
    assert_eq!(
        std::fs::read(tmp.path().join("store/dialogs.jsonl")).unwrap(),
        std::fs::read(tmp.path().join("again/dialogs.jsonl")).unwrap()
    );
}

fn http_get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).unwrap();
    buf
}

#[test]
fn serve_answers_health_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let mut child = bin()
        .current_dir(tmp.path())
        .args(["serve", "--addr", "127.0.0.1:0", "--sessions-dir", "sess"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdout = child.stdout.take().unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut seen = Vec::new();
    let addr = loop {
        let mut b = [0u8; 1];
        if stdout.read(&mut b).unwrap_or(0) == 0 || Instant::now() > deadline {
            let _ = child.kill();
            panic!("server did not announce its address: {}", String::from_utf8_lossy(&seen));
        }
        seen.push(b[0]);
        if b[0] == b'\n' {
            let line = String::from_utf8_lossy(&seen).to_string();
            break line.trim().trim_start_matches("listening on http://").to_string();
        }
    };
    let health = http_get(&addr, "/healthz");
    let missing = http_get(&addr, "/sessions/nope");
    let _ = child.kill();
    let _ = child.wait();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains(r#""status":"ok""#));
    assert!(missing.starts_with("HTTP/1.1 404"), "{missing}");
    assert!(missing.contains("not_found"));
}
