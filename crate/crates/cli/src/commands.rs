use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use geobench::datagen::{self, pipeline::quarantine_clue_entries, DatagenPrompts, Generator, RecordStore, ReviewStatus};
use geobench::exec::Exec;
use geobench::harness::{self, EvalMode, Evaluator, Gazetteer, HarnessError, PromptMode, RunConfig, TemplateSet};
use geobench::jsonl;
use geobench::metrics::{self, EvalReport, NameMatcher};
use geobench::sample::Sample;
use geobench::sampler::{self, io as sio, SamplerError, SamplingConfig};
use geobench::session::{EngineConfig, SessionEngine};

use crate::backend;
use crate::config::{pick, FileConfig};
use crate::error::{config, require_file, runtime, CliResult};
use crate::manifest::{hash_file, hash_outputs, Manifest, MANIFEST_FILE};
use crate::{DatagenArgs, EvalArgs, Pipeline, ReplayArgs, ReportArgs, ReviewAction, ReviewArgs, SampleArgs, ServeArgs};

const DEFAULT_RADIUS_KM: f64 = 5.0;
const DEFAULT_BACKEND: &str = "oracle";

fn mkdir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn read_samples(path: &Path) -> CliResult<Vec<Sample>> {
    require_file(path)?;
    jsonl::read(path).map_err(config)
}

fn dir_outputs(out: &Path) -> CliResult<BTreeMap<String, String>> {
    Ok(hash_outputs(out)?
        .into_iter()
        .filter(|(k, _)| !k.starts_with("manifest"))
        .collect())
}

fn finish_manifest(mut m: Manifest, out: &Path, file: &str) -> CliResult<()> {
    m.outputs = dir_outputs(out)?;
    m.write(&out.join(file))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleJob {
    pub countries: PathBuf,
    pub cities: PathBuf,
    pub pool: PathBuf,
    pub n: usize,
    pub seed: u64,
    pub radius_km: f64,
    pub per_city_cap: Option<usize>,
    pub allow_partial: bool,
    pub parallelism: usize,
    pub out: PathBuf,
}

pub fn sample(a: SampleArgs, file: &FileConfig) -> CliResult<()> {
    let job = SampleJob {
        countries: a.countries,
        cities: a.cities,
        pool: a.pool,
        n: a.n,
        seed: pick(a.seed, file.seed, "seed")?.unwrap_or(0),
        radius_km: pick(a.radius_km, file.radius_km, "radius_km")?.unwrap_or(DEFAULT_RADIUS_KM),
        per_city_cap: pick(a.per_city_cap, file.per_city_cap, "per_city_cap")?,
        allow_partial: a.allow_partial,
        parallelism: pick(a.parallelism, file.parallelism, "parallelism")?.unwrap_or(0),
        out: a.out,
    };
    run_sample(&job)
}

fn run_sample(job: &SampleJob) -> CliResult<()> {
    for p in [&job.countries, &job.cities, &job.pool] {
        require_file(p)?;
    }
    let countries = sio::read_countries(&job.countries).map_err(config)?;
    let cities = sio::read_cities(&job.cities).map_err(config)?;
    let pool = sio::read_pool(&job.pool).map_err(config)?;
    let mut cfg = SamplingConfig::new(job.n, job.seed);
    cfg.radius_km = job.radius_km;
    cfg.per_city_cap = job.per_city_cap;
    let (generated, partial) = match sampler::generate(&countries, &cities, &pool, &cfg, Exec::from_cap(job.parallelism)) {
        Ok(g) => (g, false),
        Err(SamplerError::Partial { collected, .. }) if job.allow_partial => (*collected, true),
        Err(e @ SamplerError::Partial { .. }) => return Err(runtime(format!("{e} (use --allow-partial to keep it)"))),
        Err(e) => return Err(config(e)),
    };
    mkdir(&job.out)?;
    let entries = sio::benchmark_entries(&pool, &generated);
    jsonl::write(&job.out.join("benchmark.jsonl"), &entries).map_err(runtime)?;
    let sm = sio::SamplingManifest::new(&cfg, &generated, partial);
    write_text(&job.out.join("sampling.json"), &(serde_json::to_string_pretty(&sm).expect("serializable") + "\n"))?;
    let m = Manifest::new("sample", Some(job.seed), job, &[job.countries.clone(), job.cities.clone(), job.pool.clone()])?;
    finish_manifest(m, &job.out, MANIFEST_FILE)?;
    println!(
        "selected {} of {} requested samples in {} draws{} -> {}",
        generated.selections.len(),
        job.n,
        generated.draws,
        if partial { " (partial)" } else { "" },
        job.out.join("benchmark.jsonl").display()
    );
    if !generated.excluded_countries.is_empty() {
        println!("countries without cities: {}", generated.excluded_countries.join(", "));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalJob {
    pub benchmark: PathBuf,
    pub mode: EvalMode,
    pub prompt_mode: PromptMode,
    pub backend: String,
    pub templates: String,
    pub gazetteer: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
    pub seed: u64,
    pub parallelism: usize,
    pub gated: bool,
    pub out: PathBuf,
}

pub fn eval(a: EvalArgs, file: &FileConfig) -> CliResult<()> {
    let job = EvalJob {
        benchmark: a.benchmark,
        mode: a.mode,
        prompt_mode: a.prompt_mode,
        backend: pick(a.backend, file.backend.clone(), "backend")?.unwrap_or_else(|| DEFAULT_BACKEND.into()),
        templates: pick(a.templates, file.templates.clone(), "templates")?.unwrap_or_else(|| "default".into()),
        gazetteer: a.gazetteer,
        aliases: a.aliases,
        image_root: pick(a.image_root, file.image_root.clone(), "image_root")?,
        seed: pick(a.seed, file.seed, "seed")?.unwrap_or(0),
        parallelism: pick(a.parallelism, file.parallelism, "parallelism")?.unwrap_or(0),
        gated: !a.ungated,
        out: a.out,
    };
    let report = run_eval(&job)?;
    print_table(&[(job.out.display().to_string(), report)]);
    Ok(())
}

fn harness_err(e: HarnessError) -> crate::error::CliError {
    match e {
        HarnessError::Config(_) => config(e),
        other => runtime(other),
    }
}

fn load_matcher(aliases: Option<&Path>) -> CliResult<NameMatcher> {
    match aliases {
        None => Ok(NameMatcher::default()),
        Some(p) => {
            require_file(p)?;
            let f = std::fs::File::open(p).map_err(|e| config(format!("{}: {e}", p.display())))?;
            NameMatcher::from_alias_json(f).map_err(|e| config(format!("{}: {e}", p.display())))
        }
    }
}

fn run_eval(job: &EvalJob) -> CliResult<EvalReport> {
    let benchmark = read_samples(&job.benchmark)?;
    if job.templates != "default" {
        require_file(Path::new(&job.templates))?;
    }
    let templates = TemplateSet::resolve(&job.templates).map_err(harness_err)?;
    let matcher = load_matcher(job.aliases.as_deref())?;
    let gazetteer = match &job.gazetteer {
        Some(p) => {
            require_file(p)?;
            Some(Gazetteer::load(p).map_err(harness_err)?)
        }
        None => None,
    };
    let resolved = backend::resolve(&job.backend)?;
    let mut cfg = RunConfig::new(job.mode, resolved.backend.id(), job.seed);
    cfg.prompt_mode = job.prompt_mode;
    cfg.template_set = templates.tag();
    cfg.parallelism = job.parallelism;
    cfg.gated = job.gated;
    cfg.retry = resolved.retry.clone();
    let mut evaluator = Evaluator::new(resolved.backend.as_ref(), &templates, &matcher);
    if let Some(root) = &job.image_root {
        evaluator = evaluator.with_image_root(root);
    }
    let run = evaluator.run(&benchmark, gazetteer.as_ref(), &cfg).map_err(harness_err)?;
    harness::write_run(&job.out, &run).map_err(runtime)?;
    let mut inputs = vec![job.benchmark.clone()];
    inputs.extend(job.gazetteer.clone());
    inputs.extend(job.aliases.clone());
    if job.templates != "default" {
        inputs.push(PathBuf::from(&job.templates));
    }
    inputs.extend(resolved.inputs);
    let m = Manifest::new("eval", Some(job.seed), job, &inputs)?;
    finish_manifest(m, &job.out, MANIFEST_FILE)?;
    Ok(run.report)
}

fn print_table(rows: &[(String, EvalReport)]) {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(3).max(3);
    let mut out = String::new();
    out.push_str(&format!("{:<width$}  {:>6}  {:>6}  {:>7}  {:>6}  {:>6}", "run", "n", "recall", "country", "region", "city"));
    for t in metrics::THRESHOLDS_KM {
        out.push_str(&format!("  {:>7}", format!("@{t}km")));
    }
    out.push_str(&format!("  {:>8}  {:>6}\n", "geoscore", "errors"));
    for (label, r) in rows {
        out.push_str(&format!(
            "{label:<width$}  {:>6}  {:>6.4}  {:>7.4}  {:>6.4}  {:>6.4}",
            r.n_samples, r.recall, r.acc_country, r.acc_region, r.acc_city
        ));
        for t in metrics::THRESHOLDS_KM {
            out.push_str(&format!("  {:>7.4}", r.acc_at_km.get(&t).copied().unwrap_or(0.0)));
        }
        out.push_str(&format!("  {:>8.2}  {:>6}\n", r.geoscore_mean, r.n_backend_errors));
    }
    emit(&out);
}

fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatagenJob {
    pub pipeline: Pipeline,
    pub samples: PathBuf,
    pub clues: Option<PathBuf>,
    pub known_countries: Option<PathBuf>,
    pub backend: String,
    pub prompts: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
    pub parallelism: usize,
    pub regenerate_rejected: bool,
    pub out: PathBuf,
}

pub fn datagen(a: DatagenArgs, file: &FileConfig) -> CliResult<()> {
    let job = DatagenJob {
        pipeline: a.pipeline,
        samples: a.samples,
        clues: a.clues,
        known_countries: a.known_countries,
        backend: pick(a.backend, file.backend.clone(), "backend")?.unwrap_or_else(|| DEFAULT_BACKEND.into()),
        prompts: a.prompts,
        image_root: pick(a.image_root, file.image_root.clone(), "image_root")?,
        parallelism: pick(a.parallelism, file.parallelism, "parallelism")?.unwrap_or(0),
        regenerate_rejected: a.regenerate_rejected,
        out: a.out,
    };
    run_datagen(&job)
}

fn manifest_name(p: Pipeline) -> String {
    match p {
        Pipeline::Clues => "manifest-clues.json".into(),
        Pipeline::Dialogs => "manifest-dialogs.json".into(),
    }
}

/// Hashes of the files one pipeline owns in a shared output directory. The
/// quarantine log is shared, so only its lines for this pipeline count.
fn datagen_outputs(dir: &Path, p: Pipeline) -> CliResult<BTreeMap<String, String>> {
    let (files, stages): (&[&str], &[&str]) = match p {
        Pipeline::Clues => (&["clues.jsonl", "repository.json", "summary-clues.json"], &["repository", "clues"]),
        Pipeline::Dialogs => (&["dialogs.jsonl", "summary-dialogs.json"], &["dialogs"]),
    };
    let mut out = BTreeMap::new();
    for f in files {
        let path = dir.join(f);
        if path.is_file() {
            out.insert(f.to_string(), hash_file(&path)?);
        }
    }
    let qpath = dir.join("quarantine.jsonl");
    let mut own = String::new();
    if qpath.is_file() {
        let text = std::fs::read_to_string(&qpath).map_err(|e| runtime(format!("{}: {e}", qpath.display())))?;
        for line in text.lines() {
            let stage = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("stage").and_then(|s| s.as_str()).map(str::to_string));
            if stage.is_some_and(|s| stages.contains(&s.as_str())) {
                own.push_str(line);
                own.push('\n');
            }
        }
    }
    out.insert(format!("quarantine.jsonl[{}]", stages.join(",")), geobench::seed::sha256_hex(own.as_bytes()));
    Ok(out)
}

fn run_datagen(job: &DatagenJob) -> CliResult<()> {
    let samples = read_samples(&job.samples)?;
    let prompts = match &job.prompts {
        Some(p) => {
            require_file(p)?;
            DatagenPrompts::load(p).map_err(config)?
        }
        None => DatagenPrompts::builtin(),
    };
    let resolved = backend::resolve(&job.backend)?;
    let matcher = NameMatcher::default();
    let mut generator = Generator::new(resolved.backend.as_ref(), &prompts, &matcher);
    generator.retry = resolved.retry.clone();
    if let Some(root) = &job.image_root {
        generator = generator.with_image_root(root);
    }
    let store = RecordStore::open(&job.out).map_err(runtime)?;
    let exec = Exec::from_cap(job.parallelism);
    let mut inputs = vec![job.samples.clone()];
    inputs.extend(resolved.inputs.clone());
    inputs.extend(job.prompts.clone());

    let summary = match job.pipeline {
        Pipeline::Clues => {
            let clue_path = job.clues.as_ref().ok_or_else(|| config("the clues pipeline needs --clues"))?;
            require_file(clue_path)?;
            inputs.push(clue_path.clone());
            let entries = datagen::read_clue_entries(clue_path).map_err(config)?;
            let known: Option<BTreeSet<String>> = match &job.known_countries {
                Some(p) => {
                    require_file(p)?;
                    inputs.push(p.clone());
                    Some(sio::read_countries(p).map_err(config)?.into_iter().map(|c| c.name).collect())
                }
                None => None,
            };
            let (repo, set_aside) = datagen::build_repository(&entries, known.as_ref());
            quarantine_clue_entries(&store, &set_aside, &prompts.tag()).map_err(runtime)?;
            write_text(
                &job.out.join("repository.json"),
                &(serde_json::to_string_pretty(&repo).expect("serializable") + "\n"),
            )?;
            println!("clue repository: {} countries, {} clues, {} entries set aside", repo.len(), repo.n_clues(), set_aside.len());
            datagen::run_clues(&generator, &samples, &repo, &store, exec, job.regenerate_rejected).map_err(runtime)?
        }
        Pipeline::Dialogs => datagen::run_dialogs(&generator, &samples, &store, exec).map_err(runtime)?,
    };
    let summary_path = job.out.join(format!("summary-{}.json", summary.stage));
    write_text(&summary_path, &(serde_json::to_string_pretty(&summary).expect("serializable") + "\n"))?;
    println!(
        "{}: {} inputs ({} already done): {} emitted, {} rejected, {} quarantined",
        summary.stage, summary.input, summary.skipped, summary.emitted, summary.rejected, summary.quarantined
    );
    for (k, v) in &summary.by_status {
        println!("  {k}: {v}");
    }
    let mut m = Manifest::new("datagen", None, job, &inputs)?;
    m.outputs = datagen_outputs(&job.out, job.pipeline)?;
    m.write(&job.out.join(manifest_name(job.pipeline)))?;
    if !summary.conserved() {
        return Err(runtime(format!(
            "record accounting mismatch: {} inputs but {} emitted + {} rejected + {} quarantined",
            summary.input, summary.emitted, summary.rejected, summary.quarantined
        )));
    }
    Ok(())
}

pub fn serve(a: ServeArgs, file: &FileConfig) -> CliResult<()> {
    let addr = pick(a.addr, file.addr.clone(), "addr")?.unwrap_or_else(|| "127.0.0.1:8080".into());
    let addr: std::net::SocketAddr = addr.parse().map_err(|e| config(format!("bad address {addr:?}: {e}")))?;
    let spec = pick(a.backend, file.backend.clone(), "backend")?.unwrap_or_else(|| DEFAULT_BACKEND.into());
    let sessions_dir = pick(a.sessions_dir, file.sessions_dir.clone(), "sessions_dir")?.unwrap_or_else(|| PathBuf::from("sessions"));
    let templates = pick(a.templates, file.templates.clone(), "templates")?.unwrap_or_else(|| "default".into());
    let seed = pick(a.seed, file.seed, "seed")?.unwrap_or(0);
    if templates != "default" {
        require_file(Path::new(&templates))?;
    }
    let resolved = backend::resolve(&spec)?;
    let cfg = EngineConfig {
        sessions_dir: Some(sessions_dir.clone()),
        templates: TemplateSet::resolve(&templates).map_err(harness_err)?,
        retry: resolved.retry.clone(),
        seed,
        ..Default::default()
    };
    let engine = SessionEngine::new(resolved.backend.clone(), cfg).map_err(runtime)?;
    let job = serde_json::json!({"addr": addr.to_string(), "backend": spec, "sessions_dir": sessions_dir, "templates": templates, "seed": seed});
    Manifest::new("serve", Some(seed), &job, &resolved.inputs)?.write(&sessions_dir.join("serve.manifest.json"))?;
    let state = geobench_server::AppState {
        engine: Arc::new(engine),
        upload_dir: sessions_dir.join("uploads"),
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    rt.block_on(geobench_server::serve(addr, state, |bound| {
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
    }))
    .map_err(|e| runtime(format!("serve on {addr}: {e}")))
}

fn status_name(s: &ReviewStatus) -> &'static str {
    match s {
        ReviewStatus::Unreviewed => "unreviewed",
        ReviewStatus::Approved => "approved",
        ReviewStatus::Rejected { .. } => "rejected",
    }
}

pub fn review(a: ReviewArgs) -> CliResult<()> {
    require_file(&a.store.join("clues.jsonl"))?;
    let store = RecordStore::open(&a.store).map_err(runtime)?;
    let log = a.store.join("review.log.jsonl");
    match a.action {
        ReviewAction::List { status } => {
            if let Some(s) = &status {
                if !matches!(s.as_str(), "unreviewed" | "approved" | "rejected") {
                    return Err(config(format!("unknown status {s:?}")));
                }
            }
            let mut out = String::new();
            for r in store.clues().map_err(runtime)? {
                let name = status_name(&r.status);
                if status.as_deref().is_some_and(|s| s != name) {
                    continue;
                }
                let detail = match &r.status {
                    ReviewStatus::Rejected { reason } => reason.clone(),
                    _ => r.rephrasing.clone(),
                };
                out.push_str(&format!("{}\t{}\t{}\t{:?}\t{}\n", r.sample_id, name, r.country, r.clue_indices, detail));
            }
            emit(&out);
            Ok(())
        }
        ReviewAction::Approve { id } => {
            let r = store.approve(&id).map_err(runtime)?;
            jsonl::append(&log, &serde_json::json!({"action": "approve", "id": id})).map_err(runtime)?;
            println!("{}\t{}", r.sample_id, status_name(&r.status));
            Ok(())
        }
        ReviewAction::Reject { id, reason } => {
            let r = store.reject(&id, &reason).map_err(runtime)?;
            jsonl::append(&log, &serde_json::json!({"action": "reject", "id": id, "reason": reason})).map_err(runtime)?;
            println!("{}\t{}", r.sample_id, status_name(&r.status));
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportJob {
    pub runs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    run_report(&ReportJob { runs: a.runs, out: a.out })
}

fn report_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn run_report(job: &ReportJob) -> CliResult<()> {
    let mut rows = Vec::new();
    let mut inputs = Vec::new();
    for dir in &job.runs {
        for f in ["run.json", "scores.jsonl"] {
            require_file(&dir.join(f))?;
            inputs.push(dir.join(f));
        }
        let r = harness::report_from_dir(dir).map_err(harness_err)?;
        rows.push((dir.display().to_string(), r));
    }
    print_table(&rows);
    if let Some(out) = &job.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            mkdir(parent)?;
        }
        let f = std::fs::File::create(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        let reports: Vec<EvalReport> = rows.into_iter().map(|(_, r)| r).collect();
        metrics::write_reports_csv(f, &reports).map_err(runtime)?;
        let mut m = Manifest::new("report", None, job, &inputs)?;
        let name = out.file_name().unwrap_or_default().to_string_lossy().to_string();
        m.outputs.insert(name, hash_file(out)?);
        m.write(&report_manifest_path(out))?;
    }
    Ok(())
}

fn job_of<T: for<'de> Deserialize<'de>>(m: &Manifest) -> CliResult<T> {
    serde_json::from_value(m.job.clone()).map_err(|e| config(format!("manifest job: {e}")))
}

pub fn replay(a: ReplayArgs) -> CliResult<()> {
    let m = Manifest::read(&a.manifest)?;
    for (path, digest) in &m.inputs {
        let p = Path::new(path);
        require_file(p)?;
        if &hash_file(p)? != digest {
            return Err(config(format!("input {path} changed since the manifest was written")));
        }
    }
    let actual = match m.command.as_str() {
        "sample" => {
            let mut job: SampleJob = job_of(&m)?;
            if let Some(o) = a.out {
                job.out = o;
            }
            run_sample(&job)?;
            dir_outputs(&job.out)?
        }
        "eval" => {
            let mut job: EvalJob = job_of(&m)?;
            if let Some(o) = a.out {
                job.out = o;
            }
            run_eval(&job)?;
            dir_outputs(&job.out)?
        }
        "datagen" => {
            let mut job: DatagenJob = job_of(&m)?;
            if let Some(o) = a.out {
                job.out = o;
            }
            run_datagen(&job)?;
            datagen_outputs(&job.out, job.pipeline)?
        }
        "report" => {
            let mut job: ReportJob = job_of(&m)?;
            let recorded = job.out.clone().ok_or_else(|| config("report manifest has no output file"))?;
            if let Some(o) = a.out {
                job.out = Some(o);
            }
            run_report(&job)?;
            let written = job.out.clone().unwrap_or_default();
            let name = recorded.file_name().unwrap_or_default().to_string_lossy().to_string();
            BTreeMap::from([(name, hash_file(&written)?)])
        }
        other => return Err(config(format!("command {other:?} cannot be replayed"))),
    };
    let mismatched: Vec<String> = m
        .outputs
        .iter()
        .filter(|(name, digest)| actual.get(*name) != Some(*digest))
        .map(|(name, _)| name.clone())
        .collect();
    if mismatched.is_empty() {
        println!("replay reproduced {} output files", m.outputs.len());
        Ok(())
    } else {
        Err(runtime(format!("replay outputs differ: {}", mismatched.join(", "))))
    }
}
