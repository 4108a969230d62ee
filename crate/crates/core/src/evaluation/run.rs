//! Evaluation of stored runs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fairness::{fairness_from_groups, FairnessReport};
use super::metrics::MappingMode;
use super::report::{evaluate, EvalReport};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::pipeline::{RunStore, Stage};

/// Disparity above which a cluster is flagged.
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelSource {
    /// `truth_label` of every manifest record that has one.
    Manifest,
    /// Line-delimited `{image_id, human_label}`; only these images are scored.
    HumanFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanLabel {
    pub image_id: String,
    pub human_label: String,
}

pub fn load_human_labels(path: &Path) -> Result<Vec<HumanLabel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let label: HumanLabel = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(label.image_id.clone()) {
            return Err(Error::DuplicateImageId {
                image_id: label.image_id,
                line: i + 1,
            });
        }
        out.push(label);
    }
    Ok(out)
}

fn require_done(store: &RunStore, run_id: &str) -> Result<()> {
    let stage = store.state(run_id)?.stage;
    if stage != Stage::Done {
        return Err(Error::InvalidArgument(format!(
            "run {run_id} has no assignments yet (next stage: {stage})"
        )));
    }
    Ok(())
}

fn eval_dir(store: &RunStore, run_id: &str) -> Result<PathBuf> {
    let dir = store.run_dir(run_id).join("eval");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Scores a finished run and writes `eval/eval.json` and
/// `eval/confusion.tsv`.
pub fn evaluate_run(store: &RunStore, run_id: &str, source: &LabelSource, mode: MappingMode) -> Result<EvalReport<f64>> {
    require_done(store, run_id)?;
    let manifest = store.manifest(run_id)?;
    let clusters = store.clusters(run_id)?;
    let assigned: BTreeMap<String, usize> = store
        .assignments(run_id)?
        .into_iter()
        .map(|a| (a.image_id, a.cluster_index))
        .collect();

    let truth: Vec<(String, String)> = match source {
        LabelSource::Manifest => manifest
            .records
            .iter()
            .filter_map(|r| Some((r.image_id.clone(), r.truth_label.clone()?)))
            .collect(),
        LabelSource::HumanFile(path) => {
            let labels = load_human_labels(path)?;
            if let Some(stray) = labels.iter().find(|l| !assigned.contains_key(&l.image_id)) {
                return Err(Error::UnknownImageId(stray.image_id.clone()));
            }
            labels.into_iter().map(|l| (l.image_id, l.human_label)).collect()
        }
    };
    if truth.is_empty() {
        return Err(Error::NoLabeledImages);
    }

    let used: BTreeSet<&str> = truth.iter().map(|(_, l)| l.as_str()).collect();
    let classes: Vec<String> = match &manifest.class_names {
        Some(names) if used.iter().all(|l| names.iter().any(|c| c == l)) => names.clone(),
        _ => used.iter().map(|s| s.to_string()).collect(),
    };
    let class_index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut pred = Vec::with_capacity(truth.len());
    let mut gold = Vec::with_capacity(truth.len());
    for (id, label) in &truth {
        let Some(&c) = assigned.get(id) else {
            return Err(Error::UnknownImageId(id.clone()));
        };
        pred.push(c);
        gold.push(class_index[label.as_str()]);
    }
    let report = evaluate::<f64>(&pred, clusters.names(), &gold, &classes, mode)?;
    let dir = eval_dir(store, run_id)?;
    fsutil::write_json(&dir.join("eval.json"), &report)?;
    let tsv = dir.join("confusion.tsv");
    fsutil::write_atomic(&tsv, report.confusion_tsv().as_bytes()).map_err(|e| Error::io(&tsv, e))?;
    Ok(report)
}

/// Per-cluster group ratios of `attribute`; writes
/// `eval/fairness-<attribute>.json`.
pub fn fairness_audit(store: &RunStore, run_id: &str, attribute: &str, flag_threshold: f64) -> Result<FairnessReport<f64>> {
    require_done(store, run_id)?;
    let manifest = store.manifest(run_id)?;
    let clusters = store.clusters(run_id)?;
    let index = manifest.index();
    let items: Vec<(usize, Option<String>)> = store
        .assignments(run_id)?
        .into_iter()
        .map(|a| {
            let group = index
                .get(a.image_id.as_str())
                .and_then(|r| r.attribute(attribute))
                .map(str::to_string);
            (a.cluster_index, group)
        })
        .collect();
    let report = fairness_from_groups(attribute, clusters.names(), &items, flag_threshold)?;
    let safe: String = attribute
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    fsutil::write_json(&eval_dir(store, run_id)?.join(format!("fairness-{safe}.json")), &report)?;
    Ok(report)
}
