//! Batch drivers. Records are generated in parallel and appended by a
//! single writer in input order, so re-runs are deterministic; samples that
//! already have a record are skipped.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::clues::{match_clues, ClueEntry, ClueRepository};
use super::dialog::{cot_deduction, cot_introspection, decision_criterion};
use super::store::{QuarantineEntry, RecordStore};
use super::{DatagenError, Generator, Rejection, PIPELINE_VERSION};
use crate::exec::Exec;
use crate::sample::Sample;
use crate::seed;

/// Input accounting for one pipeline over one input set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub stage: String,
    pub input: usize,
    pub emitted: usize,
    pub rejected: usize,
    pub quarantined: usize,
    /// Inputs that already had a record before this run.
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_status: BTreeMap<String, usize>,
}

impl PipelineSummary {
    pub fn conserved(&self) -> bool {
        self.input == self.emitted + self.rejected + self.quarantined
    }
}

fn check_unique(samples: &[Sample]) -> Result<(), DatagenError> {
    let mut seen = BTreeSet::new();
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(DatagenError::Precondition(format!("duplicate sample id {:?}", s.sample_id)));
        }
    }
    Ok(())
}

fn rejected_entry(stage: &str, id: &str, r: Rejection, prompt_version: &str) -> QuarantineEntry {
    QuarantineEntry {
        stage: stage.into(),
        id: id.into(),
        disposition: "rejected".into(),
        reason: Some(r.reason),
        detail: r.detail,
        replies: r.replies,
        pipeline_version: PIPELINE_VERSION.into(),
        prompt_version: prompt_version.into(),
    }
}

fn quarantined_entry(stage: &str, id: &str, detail: String, prompt_version: &str) -> QuarantineEntry {
    QuarantineEntry {
        stage: stage.into(),
        id: id.into(),
        disposition: "quarantined".into(),
        reason: None,
        detail,
        replies: Vec::new(),
        pipeline_version: PIPELINE_VERSION.into(),
        prompt_version: prompt_version.into(),
    }
}

/// Records repository input entries that were set aside. Entries are keyed
/// by a hash of their content, so repeated calls append nothing new.
pub fn quarantine_clue_entries(
    store: &RecordStore,
    entries: &[(ClueEntry, String)],
    prompt_version: &str,
) -> Result<usize, DatagenError> {
    let have: BTreeSet<String> = store
        .quarantine()?
        .into_iter()
        .filter(|q| q.stage == "repository")
        .map(|q| q.id)
        .collect();
    let mut added = 0;
    for (e, why) in entries {
        let id = seed::json_hash(e)[..16].to_string();
        if have.contains(&id) {
            continue;
        }
        let mut q = quarantined_entry("repository", &id, why.clone(), prompt_version);
        q.replies = vec![serde_json::to_string(e).expect("serializable")];
        store.append_quarantine(&q)?;
        added += 1;
    }
    Ok(added)
}

enum ClueOutcome {
    Record(super::clues::ClueRecord),
    Quarantine(QuarantineEntry),
}

/// Clue matching over `samples`. Approved records are never regenerated;
/// rejected ones are regenerated only with `regenerate_rejected`.
pub fn run_clues(
    generator: &Generator<'_>,
    samples: &[Sample],
    repo: &ClueRepository,
    store: &RecordStore,
    exec: Exec,
    regenerate_rejected: bool,
) -> Result<PipelineSummary, DatagenError> {
    check_unique(samples)?;
    let prompt_version = generator.prompts.tag();
    let existing: BTreeMap<String, bool> = store.clues()?.into_iter().map(|r| (r.sample_id.clone(), r.is_rejected())).collect();
    let held: BTreeSet<String> = store
        .quarantine()?
        .into_iter()
        .filter(|q| q.stage == "clues")
        .map(|q| q.id)
        .collect();
    let pending: Vec<&Sample> = samples
        .iter()
        .filter(|s| !held.contains(&s.sample_id))
        .filter(|s| match existing.get(&s.sample_id) {
            None => true,
            Some(&rejected) => rejected && regenerate_rejected,
        })
        .collect();
    let skipped = samples.len() - pending.len();

    let outcomes = exec.map(&pending, |s| match match_clues(generator, s, repo) {
        Ok(r) => ClueOutcome::Record(r),
        Err(e) => ClueOutcome::Quarantine(quarantined_entry("clues", &s.sample_id, e.to_string(), &prompt_version)),
    });
    for o in &outcomes {
        match o {
            ClueOutcome::Record(r) => store.append_clue(r)?,
            ClueOutcome::Quarantine(q) => store.append_quarantine(q)?,
        }
    }

    let ids: BTreeSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    let mut summary = PipelineSummary {
        stage: "clues".into(),
        input: samples.len(),
        skipped,
        ..Default::default()
    };
    for r in store.clues()?.iter().filter(|r| ids.contains(r.sample_id.as_str())) {
        let status = match &r.status {
            super::ReviewStatus::Unreviewed => "unreviewed",
            super::ReviewStatus::Approved => "approved",
            super::ReviewStatus::Rejected { .. } => "rejected",
        };
        *summary.by_status.entry(status.into()).or_default() += 1;
        if r.is_rejected() {
            summary.rejected += 1;
        } else {
            summary.emitted += 1;
        }
    }
    let with_record: BTreeSet<String> = store.clues()?.into_iter().map(|r| r.sample_id).collect();
    summary.quarantined = store
        .quarantine()?
        .iter()
        .filter(|q| q.stage == "clues" && ids.contains(q.id.as_str()) && !with_record.contains(&q.id))
        .count();
    Ok(summary)
}

enum DialogOutcome {
    Record(super::dialog::DialogRecord),
    Entry(QuarantineEntry),
}

/// Deduction, then introspection for records more than 25 km off.
pub fn run_dialogs(
    generator: &Generator<'_>,
    samples: &[Sample],
    store: &RecordStore,
    exec: Exec,
) -> Result<PipelineSummary, DatagenError> {
    check_unique(samples)?;
    let prompt_version = generator.prompts.tag();
    let mut done: BTreeSet<String> = store.dialogs()?.into_iter().map(|r| r.question_id).collect();
    done.extend(store.quarantine()?.into_iter().filter(|q| q.stage == "dialogs").map(|q| q.id));
    let pending: Vec<&Sample> = samples.iter().filter(|s| !done.contains(&s.sample_id)).collect();
    let skipped = samples.len() - pending.len();

    let outcomes = exec.map(&pending, |s| {
        if s.image_path.trim().is_empty() {
            return DialogOutcome::Entry(quarantined_entry("dialogs", &s.sample_id, "sample has no image".into(), &prompt_version));
        }
        let rec = match cot_deduction(generator, s) {
            Ok(r) => r,
            Err(r) => return DialogOutcome::Entry(rejected_entry("dialogs", &s.sample_id, r, &prompt_version)),
        };
        if !decision_criterion(rec.predicted, rec.truth) {
            return DialogOutcome::Record(rec);
        }
        match cot_introspection(generator, &rec) {
            Ok(r) => DialogOutcome::Record(r),
            Err(r) => DialogOutcome::Entry(rejected_entry("dialogs", &s.sample_id, r, &prompt_version)),
        }
    });
    for o in &outcomes {
        match o {
            DialogOutcome::Record(r) => store.append_dialog(r)?,
            DialogOutcome::Entry(q) => store.append_quarantine(q)?,
        }
    }

    let ids: BTreeSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    let mut summary = PipelineSummary {
        stage: "dialogs".into(),
        input: samples.len(),
        skipped,
        ..Default::default()
    };
    for r in store.dialogs()?.iter().filter(|r| ids.contains(r.question_id.as_str())) {
        summary.emitted += 1;
        let k = match r.status {
            super::DialogStatus::Deduced => "deduced",
            super::DialogStatus::Introspected => "introspected",
        };
        *summary.by_status.entry(k.into()).or_default() += 1;
    }
    for q in store.quarantine()?.iter().filter(|q| q.stage == "dialogs" && ids.contains(q.id.as_str())) {
        if q.disposition == "rejected" {
            summary.rejected += 1;
            let k = format!("rejected:{}", q.reason.map_or("unknown", |r| r.as_str()));
            *summary.by_status.entry(k).or_default() += 1;
        } else {
            summary.quarantined += 1;
        }
    }
    Ok(summary)
}
