//! Run directories, checkpoints, resume and refinement.
//!
//! Layout under the store root:
//!
//! ```text
//! cache/<request_key hex>        gateway response cache shared by all runs
//! locks/slot-<n>.lock            one per active pipeline execution
//! runs/<run_id>/config.json      criterion, settings, models, config digest
//!              manifest.jsonl
//!              state.json        next stage and counters
//!              lineage.json
//!              descriptions.jsonl raw_labels.jsonl dictionary.jsonl
//!              step2b.json clusters.jsonl assignments.jsonl
//!              journal/<stage>.jsonl   per-item progress of the running stage
//!              eval/             evaluation outputs
//! ```
//!
//! Stage files are written atomically once a stage completes and are sorted
//! by `image_id`. Items finished inside an interrupted stage are kept in the
//! journal and skipped on resume.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::dictionary::{build_dictionary, DictEntry, LabelDictionary};
use super::steps::{
    assign_descriptions, check_failures, describe_images, discover_clusters, label_descriptions, own_failures,
    Discovery, PipelineConfig,
};
use super::types::{Assignment, Counters, Description, MatchKind, RawLabel, Stage, StageCounter};
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::gateway::{Gateway, GatewayConfig, ModelKind, Sampling};
use crate::ingest::{parse_manifest, DatasetManifest, ImageRecord};
use crate::prompts::{ClusterSet, TextCriterion};

const RUN_PREFIX: &str = "run-";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Models {
    pub vlm: String,
    pub llm: String,
}

impl Models {
    pub fn of(gw: &Gateway) -> Self {
        Models {
            vlm: gw.model_id(ModelKind::Vlm),
            llm: gw.model_id(ModelKind::Llm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub parent_run_id: Option<String>,
    pub dataset_id: String,
    pub criterion: TextCriterion,
    pub settings: PipelineConfig,
    pub models: Models,
    pub sampling: Sampling,
    pub config_digest: Digest,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    dataset_id: &'a str,
    images: Vec<(&'a str, String)>,
    criterion: &'a TextCriterion,
    settings: &'a PipelineConfig,
    models: &'a Models,
    sampling: &'a Sampling,
}

/// Digest over everything that determines a run's outputs. Image paths are
/// left out, so moving the dataset does not invalidate a run.
pub fn config_digest(
    manifest: &DatasetManifest,
    criterion: &TextCriterion,
    settings: &PipelineConfig,
    models: &Models,
    sampling: &Sampling,
) -> Digest {
    let input = DigestInput {
        dataset_id: &manifest.dataset_id,
        images: manifest
            .records
            .iter()
            .map(|r| (r.image_id.as_str(), r.content_hash.to_hex()))
            .collect(),
        criterion,
        settings,
        models,
        sampling,
    };
    Digest::of(&serde_json::to_vec(&input).expect("digest input serializes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub parent_run_id: Option<String>,
    pub dataset_id: String,
    pub criterion_id: String,
    pub stage: Stage,
    pub counters: Counters,
    pub config_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub run_id: String,
    pub parent_run_id: Option<String>,
    /// Parent first, root last.
    pub ancestors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLine {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSize {
    pub index: usize,
    pub name: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub n_evaluated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub parent_run_id: Option<String>,
    pub criterion: TextCriterion,
    pub k: usize,
    pub stage: Stage,
    pub dataset_id: String,
    pub dataset_size: u64,
    /// Empty until Step 3 completes.
    pub clusters: Vec<ClusterSize>,
    pub fallback_rate: Option<f64>,
    pub metrics: Option<MetricSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageProgress {
    pub stage: Stage,
    pub completed: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub run_id: String,
    pub stage: Stage,
    pub stages: Vec<StageProgress>,
    /// Last execution error, if the run stopped on one.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Return after checkpointing this stage, as if interrupted.
    pub stop_after: Option<Stage>,
}

#[derive(Debug, Clone, Default)]
pub struct ResumeOverrides {
    pub criterion: Option<TextCriterion>,
    pub manifest: Option<DatasetManifest>,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
    max_active: usize,
}

/// Held while a pipeline executes; removes its lock file on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn pid_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in [root.join("runs"), root.join("cache"), root.join("locks")] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(RunStore { root, max_active: 1 })
    }

    /// Number of pipeline executions allowed at once (default 1).
    pub fn with_max_active(mut self, n: usize) -> Self {
        self.max_active = n.max(1);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    /// `base` with the store's response cache enabled.
    pub fn gateway_config(&self, base: GatewayConfig) -> GatewayConfig {
        GatewayConfig {
            cache_dir: Some(self.cache_dir()),
            ..base
        }
    }

    pub fn exists(&self, run_id: &str) -> bool {
        valid_run_id(run_id) && self.run_dir(run_id).join("config.json").is_file()
    }

    fn require(&self, run_id: &str) -> Result<PathBuf> {
        if self.exists(run_id) {
            Ok(self.run_dir(run_id))
        } else {
            Err(Error::RunNotFound(run_id.to_string()))
        }
    }

    pub fn list_runs(&self) -> Result<Vec<String>> {
        let dir = self.root.join("runs");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if self.exists(&name) {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn next_run_id(&self) -> Result<String> {
        let max = self
            .list_runs()?
            .iter()
            .filter_map(|id| id.strip_prefix(RUN_PREFIX)?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        Ok(format!("{RUN_PREFIX}{:04}", max + 1))
    }

    pub fn lock(&self, run_id: &str) -> Result<StoreLock> {
        let dir = self.root.join("locks");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for slot in 0..self.max_active {
            let path = dir.join(format!("slot-{slot}.lock"));
            for _ in 0..2 {
                match OpenOptions::new().write(true).create_new(true).open(&path) {
                    Ok(mut f) => {
                        writeln!(f, "{} {run_id}", std::process::id()).map_err(|e| Error::io(&path, e))?;
                        return Ok(StoreLock { path });
                    }
                    Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                        let stale = fs::read_to_string(&path)
                            .ok()
                            .and_then(|s| s.split_whitespace().next()?.parse::<u32>().ok())
                            .is_some_and(|pid| !pid_alive(pid));
                        if !stale {
                            break;
                        }
                        warn!(lock = %path.display(), "removing stale run lock");
                        let _ = fs::remove_file(&path);
                    }
                    Err(e) => return Err(Error::io(&path, e)),
                }
            }
        }
        Err(Error::StoreBusy(self.root.display().to_string()))
    }

    pub fn config(&self, run_id: &str) -> Result<RunConfig> {
        fsutil::read_json(&self.require(run_id)?.join("config.json"))
    }

    pub fn state(&self, run_id: &str) -> Result<RunState> {
        fsutil::read_json(&self.require(run_id)?.join("state.json"))
    }

    pub fn manifest(&self, run_id: &str) -> Result<DatasetManifest> {
        let path = self.require(run_id)?.join("manifest.jsonl");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        parse_manifest(&text, &path.display().to_string(), "dataset")
    }

    pub fn lineage(&self, run_id: &str) -> Result<Lineage> {
        fsutil::read_json(&self.require(run_id)?.join("lineage.json"))
    }

    pub fn children(&self, run_id: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for id in self.list_runs()? {
            if self.config(&id)?.parent_run_id.as_deref() == Some(run_id) {
                out.push(id);
            }
        }
        Ok(out)
    }

    fn stage_file<T: serde::de::DeserializeOwned>(&self, run_id: &str, name: &str) -> Result<Vec<T>> {
        fsutil::read_json_lines(&self.require(run_id)?.join(name), false)
    }

    pub fn descriptions(&self, run_id: &str) -> Result<Vec<Description>> {
        self.stage_file(run_id, "descriptions.jsonl")
    }

    pub fn raw_labels(&self, run_id: &str) -> Result<Vec<RawLabel>> {
        self.stage_file(run_id, "raw_labels.jsonl")
    }

    pub fn dictionary(&self, run_id: &str) -> Result<LabelDictionary> {
        let entries: Vec<DictEntry> = self.stage_file(run_id, "dictionary.jsonl")?;
        LabelDictionary::from_counts(entries.into_iter().map(|e| (e.label, e.count)))
    }

    pub fn discovery(&self, run_id: &str) -> Result<Discovery> {
        fsutil::read_json(&self.require(run_id)?.join("step2b.json"))
    }

    pub fn clusters(&self, run_id: &str) -> Result<ClusterSet> {
        let lines: Vec<ClusterLine> = self.stage_file(run_id, "clusters.jsonl")?;
        ClusterSet::new(lines.into_iter().map(|l| l.name))
            .map_err(|e| Error::InvalidArgument(format!("run {run_id}: corrupt clusters file: {e}")))
    }

    pub fn assignments(&self, run_id: &str) -> Result<Vec<Assignment>> {
        self.stage_file(run_id, "assignments.jsonl")
    }

    /// Per-cluster sizes of a finished run, in cluster order.
    pub fn cluster_sizes(&self, run_id: &str) -> Result<Vec<ClusterSize>> {
        let clusters = self.clusters(run_id)?;
        let mut sizes = vec![0u64; clusters.len()];
        for a in self.assignments(run_id)? {
            if let Some(s) = sizes.get_mut(a.cluster_index) {
                *s += 1;
            }
        }
        Ok(clusters
            .names()
            .iter()
            .zip(sizes)
            .enumerate()
            .map(|(index, (name, size))| ClusterSize {
                index,
                name: name.clone(),
                size,
            })
            .collect())
    }

    pub fn summary(&self, run_id: &str) -> Result<RunSummary> {
        let config = self.config(run_id)?;
        let state = self.state(run_id)?;
        let done = state.stage == Stage::Done;
        let clusters = if done { self.cluster_sizes(run_id)? } else { Vec::new() };
        let fallback_rate = done.then(|| {
            if state.counters.total == 0 {
                0.0
            } else {
                state.counters.step3_fallback as f64 / state.counters.total as f64
            }
        });
        let eval_path = self.run_dir(run_id).join("eval").join("eval.json");
        let metrics = if eval_path.is_file() {
            let r: crate::EvalReport = fsutil::read_json(&eval_path)?;
            Some(MetricSnapshot {
                acc: r.acc,
                nmi: r.nmi,
                ari: r.ari,
                n_evaluated: r.n_evaluated,
            })
        } else {
            None
        };
        Ok(RunSummary {
            run_id: config.run_id,
            parent_run_id: config.parent_run_id,
            k: config.criterion.k,
            criterion: config.criterion,
            stage: state.stage,
            dataset_id: config.dataset_id,
            dataset_size: state.counters.total,
            clusters,
            fallback_rate,
            metrics,
        })
    }

    pub fn progress(&self, run_id: &str) -> Result<Progress> {
        let dir = self.require(run_id)?;
        let state = self.state(run_id)?;
        let total = state.counters.total;
        let stages = [Stage::Step1, Stage::Step2a, Stage::Step2b, Stage::Step3]
            .into_iter()
            .map(|stage| {
                let completed = if stage < state.stage {
                    total
                } else if stage == state.stage {
                    count_lines(&journal_path(&dir, stage)).min(total)
                } else {
                    0
                };
                StageProgress { stage, completed, total }
            })
            .collect();
        let error = fs::read_to_string(dir.join("error.json"))
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| v.get("message").and_then(|m| m.as_str()).map(str::to_string));
        Ok(Progress {
            run_id: run_id.to_string(),
            stage: state.stage,
            stages,
            error,
        })
    }
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn journal_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join("journal").join(format!("{stage}.jsonl"))
}

fn count_lines(path: &Path) -> u64 {
    fs::read(path)
        .map(|b| b.iter().filter(|&&c| c == b'\n').count() as u64)
        .unwrap_or(0)
}

/// Appends completed items to a stage journal from worker threads.
struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    fn open(path: PathBuf) -> Result<Self> {
        if let Some(d) = path.parent() {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let file = fsutil::open_append(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Journal {
            path,
            file: Mutex::new(file),
        })
    }

    fn append<T: Serialize>(&self, item: &T) {
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = fsutil::append_json_line(&mut f, item) {
            warn!(journal = %self.path.display(), error = %e, "journal append failed");
        }
    }
}

/// Journaled items worth keeping: successes and upstream failures.
fn load_journal<T, F>(path: &Path, keep: F) -> Result<BTreeMap<String, T>>
where
    T: serde::de::DeserializeOwned,
    F: Fn(&T) -> Option<String>,
{
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let items: Vec<T> = fsutil::read_json_lines(path, true)?;
    Ok(items.into_iter().filter_map(|i| keep(&i).map(|id| (id, i))).collect())
}

fn retained(error: Option<&super::types::ItemError>) -> bool {
    error.is_none_or(|e| e.kind == "upstream_failed")
}

pub struct Pipeline<'a> {
    store: &'a RunStore,
    gateway: &'a Gateway,
    options: RunOptions,
}

impl<'a> Pipeline<'a> {
    pub fn new(store: &'a RunStore, gateway: &'a Gateway) -> Self {
        Pipeline {
            store,
            gateway,
            options: RunOptions::default(),
        }
    }

    pub fn with_options(mut self, options: RunOptions) -> Self {
        self.options = options;
        self
    }

    /// Writes the run directory for a new run at stage `step1`.
    pub fn create_run(
        &self,
        manifest: &DatasetManifest,
        criterion: &TextCriterion,
        settings: &PipelineConfig,
        run_id: Option<&str>,
        parent_run_id: Option<&str>,
    ) -> Result<RunState> {
        criterion.validate()?;
        if manifest.records.is_empty() {
            return Err(Error::ZeroImages(manifest.dataset_id.clone()));
        }
        let (run_id, dir) = self.reserve_dir(run_id)?;
        let models = Models::of(self.gateway);
        let sampling = self.gateway.config().sampling.clone();
        let digest = config_digest(manifest, criterion, settings, &models, &sampling);
        let ancestors = match parent_run_id {
            Some(p) => {
                let mut chain = vec![p.to_string()];
                chain.extend(self.store.lineage(p)?.ancestors);
                chain
            }
            None => Vec::new(),
        };
        let config = RunConfig {
            run_id: run_id.clone(),
            parent_run_id: parent_run_id.map(str::to_string),
            dataset_id: manifest.dataset_id.clone(),
            criterion: criterion.clone(),
            settings: settings.clone(),
            models,
            sampling,
            config_digest: digest,
        };
        let state = RunState {
            run_id: run_id.clone(),
            parent_run_id: config.parent_run_id.clone(),
            dataset_id: manifest.dataset_id.clone(),
            criterion_id: criterion.criterion_id.clone(),
            stage: Stage::Step1,
            counters: Counters {
                total: manifest.records.len() as u64,
                ..Counters::default()
            },
            config_digest: digest,
        };
        manifest.save(&dir.join("manifest.jsonl"))?;
        fsutil::write_json(
            &dir.join("lineage.json"),
            &Lineage {
                run_id: run_id.clone(),
                parent_run_id: config.parent_run_id.clone(),
                ancestors,
            },
        )?;
        fsutil::write_json(&dir.join("state.json"), &state)?;
        // config.json last: its presence marks the run as existing.
        fsutil::write_json(&dir.join("config.json"), &config)?;
        info!(run_id = %run_id, "created run");
        Ok(state)
    }

    fn reserve_dir(&self, run_id: Option<&str>) -> Result<(String, PathBuf)> {
        let runs = self.store.root.join("runs");
        fs::create_dir_all(&runs).map_err(|e| Error::io(&runs, e))?;
        if let Some(id) = run_id {
            if !valid_run_id(id) {
                return Err(Error::InvalidArgument(format!("invalid run id {id:?}")));
            }
            let dir = self.store.run_dir(id);
            return match fs::create_dir(&dir) {
                Ok(()) => Ok((id.to_string(), dir)),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(Error::RunExists(id.to_string())),
                Err(e) => Err(Error::io(&dir, e)),
            };
        }
        for _ in 0..1000 {
            let id = self.store.next_run_id()?;
            let dir = self.store.run_dir(&id);
            match fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    // Directory without config.json yet; step past it.
                    let marker = dir.join("config.json");
                    if !marker.exists() {
                        let n: u64 = id[RUN_PREFIX.len()..].parse().unwrap_or(0);
                        let next = format!("{RUN_PREFIX}{:04}", n + 1);
                        let dir = self.store.run_dir(&next);
                        if fs::create_dir(&dir).is_ok() {
                            return Ok((next, dir));
                        }
                    }
                }
                Err(e) => return Err(Error::io(&dir, e)),
            }
        }
        Err(Error::InvalidArgument("could not allocate a run id".into()))
    }

    pub fn run_all(
        &self,
        manifest: &DatasetManifest,
        criterion: &TextCriterion,
        settings: &PipelineConfig,
        run_id: Option<&str>,
    ) -> Result<RunState> {
        let state = self.create_run(manifest, criterion, settings, run_id, None)?;
        self.execute(&state.run_id)
    }

    /// Continues an interrupted run. Overrides that would change the
    /// configuration digest are refused.
    pub fn resume(&self, run_id: &str, overrides: &ResumeOverrides) -> Result<RunState> {
        let config = self.store.config(run_id)?;
        if overrides.criterion.is_some() || overrides.manifest.is_some() {
            let manifest = match &overrides.manifest {
                Some(m) => m.clone(),
                None => self.store.manifest(run_id)?,
            };
            let criterion = overrides.criterion.as_ref().unwrap_or(&config.criterion);
            let found = config_digest(&manifest, criterion, &config.settings, &config.models, &config.sampling);
            if found != config.config_digest {
                return Err(Error::ConfigMismatch {
                    run_id: run_id.to_string(),
                    expected: config.config_digest.short(),
                    found: found.short(),
                });
            }
        }
        self.execute(run_id)
    }

    /// Creates a child of a finished run with an edited criterion, without
    /// executing it.
    pub fn prepare_refine(&self, parent_run_id: &str, criterion: &TextCriterion, run_id: Option<&str>) -> Result<RunState> {
        let parent = self.store.config(parent_run_id)?;
        if self.store.state(parent_run_id)?.stage != Stage::Done {
            return Err(Error::ParentIncomplete(parent_run_id.to_string()));
        }
        let manifest = self.store.manifest(parent_run_id)?;
        self.create_run(&manifest, criterion, &parent.settings, run_id, Some(parent_run_id))
    }

    pub fn refine(&self, parent_run_id: &str, criterion: &TextCriterion, run_id: Option<&str>) -> Result<RunState> {
        let state = self.prepare_refine(parent_run_id, criterion, run_id)?;
        self.execute(&state.run_id)
    }

    /// Runs the remaining stages of an existing run.
    pub fn execute(&self, run_id: &str) -> Result<RunState> {
        let dir = self.store.require(run_id)?;
        let mut state = self.store.state(run_id)?;
        if state.stage == Stage::Done {
            return Ok(state);
        }
        let _lock = self.store.lock(run_id)?;
        let error_path = dir.join("error.json");
        let _ = fs::remove_file(&error_path);
        let result = self.execute_locked(&dir, &mut state);
        if let Err(e) = &result {
            let body = serde_json::json!({"kind": e.kind(), "message": e.to_string()});
            let _ = fsutil::write_json(&error_path, &body);
        }
        result.map(|()| state)
    }

    fn execute_locked(&self, dir: &Path, state: &mut RunState) -> Result<()> {
        let config = self.store.config(&state.run_id)?;
        let models = Models::of(self.gateway);
        if models != config.models || self.gateway.config().sampling != config.sampling {
            let found = config_digest(
                &self.store.manifest(&state.run_id)?,
                &config.criterion,
                &config.settings,
                &models,
                &self.gateway.config().sampling,
            );
            return Err(Error::ConfigMismatch {
                run_id: state.run_id.clone(),
                expected: config.config_digest.short(),
                found: found.short(),
            });
        }
        let manifest = self.store.manifest(&state.run_id)?;
        let tc = &config.criterion;
        let cfg = &config.settings;

        while state.stage != Stage::Done {
            let stage = state.stage;
            info!(run_id = %state.run_id, %stage, "running stage");
            match stage {
                Stage::Step1 => {
                    let out = self.run_journaled(dir, stage, &manifest.records, |r| r.image_id.clone(), |d: &Description| {
                        retained(d.error.as_ref()).then(|| d.image_id.clone())
                    }, |gw, todo, sink| describe_images(gw, todo, tc, sink))?;
                    let failed = own_failures(out.iter().map(|d| (d.image_id.as_str(), d.error.as_ref())));
                    check_failures(stage, &failed, out.len(), cfg.failure_limit)?;
                    fsutil::write_json_lines(&dir.join("descriptions.jsonl"), &out)?;
                    state.counters.step1 = counter(out.len(), failed.len());
                }
                Stage::Step2a => {
                    let descriptions = self.store.descriptions(&state.run_id)?;
                    let out = self.run_journaled(dir, stage, &descriptions, |d| d.image_id.clone(), |l: &RawLabel| {
                        retained(l.error.as_ref()).then(|| l.image_id.clone())
                    }, |gw, todo, sink| label_descriptions(gw, todo, tc, sink))?;
                    let failed = own_failures(out.iter().map(|l| (l.image_id.as_str(), l.error.as_ref())));
                    check_failures(stage, &failed, out.len(), cfg.failure_limit)?;
                    fsutil::write_json_lines(&dir.join("raw_labels.jsonl"), &out)?;
                    state.counters.step2a = counter(out.len(), failed.len());
                }
                Stage::Step2b => {
                    let labels = self.store.raw_labels(&state.run_id)?;
                    let ok: Vec<RawLabel> = labels.into_iter().filter(|l| l.error.is_none()).collect();
                    let dict = build_dictionary(&ok);
                    fsutil::write_json_lines(&dir.join("dictionary.jsonl"), &dict.sorted())?;
                    let filtered = if dict.is_empty() {
                        dict
                    } else {
                        dict.filter(cfg.dictionary_threshold)?
                    };
                    let discovery = discover_clusters(self.gateway, &filtered, tc, cfg)?;
                    fsutil::write_json(&dir.join("step2b.json"), &discovery)?;
                    let lines: Vec<ClusterLine> = discovery
                        .clusters
                        .names()
                        .iter()
                        .enumerate()
                        .map(|(index, name)| ClusterLine {
                            index,
                            name: name.clone(),
                        })
                        .collect();
                    fsutil::write_json_lines(&dir.join("clusters.jsonl"), &lines)?;
                    state.counters.step2b_calls = discovery.attempts.len() as u64;
                }
                Stage::Step3 => {
                    let descriptions = self.store.descriptions(&state.run_id)?;
                    let clusters = self.store.clusters(&state.run_id)?;
                    let mut step_err = None;
                    let out = self.run_journaled(dir, stage, &descriptions, |d| d.image_id.clone(), |a: &Assignment| {
                        (retained(a.error.as_ref()) && a.cluster_index < clusters.len()).then(|| a.image_id.clone())
                    }, |gw, todo, sink| match assign_descriptions(gw, todo, &clusters, tc, cfg, sink) {
                        Ok(v) => v,
                        Err(e) => {
                            step_err = Some(e);
                            Vec::new()
                        }
                    })?;
                    if let Some(e) = step_err {
                        return Err(e);
                    }
                    let failed = own_failures(out.iter().map(|a| (a.image_id.as_str(), a.error.as_ref())));
                    check_failures(stage, &failed, out.len(), cfg.failure_limit)?;
                    fsutil::write_json_lines(&dir.join("assignments.jsonl"), &out)?;
                    state.counters.step3 = counter(out.len(), failed.len());
                    state.counters.step3_fallback =
                        out.iter().filter(|a| a.match_kind == MatchKind::Fallback).count() as u64;
                }
                Stage::Done => unreachable!(),
            }
            state.stage = stage.next();
            fsutil::write_json(&dir.join("state.json"), state)?;
            let _ = fs::remove_file(journal_path(dir, stage));
            if self.options.stop_after == Some(stage) {
                break;
            }
        }
        let journal_dir = dir.join("journal");
        if journal_dir.exists() && fs::read_dir(&journal_dir).is_ok_and(|mut d| d.next().is_none()) {
            let _ = fs::remove_dir(&journal_dir);
        }
        Ok(())
    }

    /// Runs `work` over the inputs not yet in the stage journal and returns
    /// all outputs in input order.
    fn run_journaled<I, O, K, R, W>(
        &self,
        dir: &Path,
        stage: Stage,
        inputs: &[I],
        input_id: K,
        retain: R,
        work: W,
    ) -> Result<Vec<O>>
    where
        I: Clone + Sync,
        O: Serialize + serde::de::DeserializeOwned + Clone,
        K: Fn(&I) -> String,
        R: Fn(&O) -> Option<String>,
        W: FnOnce(&Gateway, &[I], &(dyn Fn(&O) + Sync)) -> Vec<O>,
    {
        let path = journal_path(dir, stage);
        let mut done = load_journal(&path, retain)?;
        let mut seen = HashSet::new();
        let todo: Vec<I> = inputs
            .iter()
            .filter(|i| {
                let id = input_id(i);
                !done.contains_key(&id) && seen.insert(id)
            })
            .cloned()
            .collect();
        if !done.is_empty() {
            info!(%stage, reused = done.len(), remaining = todo.len(), "resuming from journal");
        }
        if !todo.is_empty() {
            let journal = Journal::open(path)?;
            let new = work(self.gateway, &todo, &|o: &O| journal.append(o));
            for (i, o) in todo.iter().zip(new) {
                done.insert(input_id(i), o);
            }
        }
        let mut emitted = HashSet::new();
        Ok(inputs
            .iter()
            .filter_map(|i| {
                let id = input_id(i);
                if emitted.insert(id.clone()) {
                    done.remove(&id)
                } else {
                    None
                }
            })
            .collect())
    }
}

fn counter(total: usize, failed: usize) -> StageCounter {
    StageCounter {
        done: (total - failed) as u64,
        failed: failed as u64,
    }
}

/// Picks the records of `manifest` whose ids appear in `ids`.
pub fn records_by_id<'m>(manifest: &'m DatasetManifest, ids: &[String]) -> Vec<&'m ImageRecord> {
    let index = manifest.index();
    ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect()
}
