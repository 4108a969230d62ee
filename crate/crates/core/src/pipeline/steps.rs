use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::dictionary::{entries_prompt_text, DictEntry, LabelDictionary};
use super::matcher::{match_answer, DEFAULT_FUZZY_RATIO};
use super::types::{Assignment, Description, ItemError, MatchKind, RawLabel, Stage};
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::gateway::{estimate_tokens, Gateway, GatewayError, ModelKind};
use crate::ingest::{DatasetManifest, ImageRecord};
use crate::prompts::{
    extract_answer, normalize_label, parse_cluster_list, render_step2b, render_step3, with_input, ClusterSet,
    ParseFailure, TextCriterion,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Raw labels seen fewer times than this are left out of Step 2b (0 = off).
    pub dictionary_threshold: u64,
    /// Total Step-2b attempts per cluster-list request.
    pub k_attempts: usize,
    pub fuzzy_ratio: f64,
    /// A stage aborts when its failed fraction exceeds this.
    pub failure_limit: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dictionary_threshold: 0,
            k_attempts: 3,
            fuzzy_ratio: DEFAULT_FUZZY_RATIO,
            failure_limit: 0.01,
        }
    }
}

pub(crate) type Sink<'a, T> = &'a (dyn Fn(&T) + Sync);

fn fan_out<T: Sync, R: Send>(gw: &Gateway, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let threads = gw.max_concurrency().min(items.len());
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// Errors when more than `limit` of `total` items failed.
pub(crate) fn check_failures(stage: Stage, failed: &Failures, total: usize, limit: f64) -> Result<()> {
    if total > 0 && !failed.ids.is_empty() && failed.len() as f64 / total as f64 > limit {
        return Err(Error::StageAborted {
            stage: stage.to_string(),
            failed: failed.len(),
            total,
            first_failed: failed.ids.iter().take(5).cloned().collect(),
            first_error: failed.first_error.clone().unwrap_or_default(),
        });
    }
    Ok(())
}

fn describe_one(gw: &Gateway, rec: &ImageRecord, tc: &TextCriterion) -> Description {
    let failed = |key: Option<Digest>, error: ItemError| Description {
        image_id: rec.image_id.clone(),
        text: String::new(),
        request_key: key,
        error: Some(error),
    };
    let bytes = match rec.read_bytes() {
        Ok(b) => b,
        Err(e) => return failed(None, ItemError::from_error(&e)),
    };
    if Digest::of(&bytes) != rec.content_hash {
        return failed(
            None,
            ItemError {
                kind: "content_changed".into(),
                message: format!("{} no longer matches its recorded content hash", rec.path.display()),
            },
        );
    }
    let req = gw.vlm_request(tc.step1_prompt.clone(), rec.content_hash, Arc::new(bytes));
    match gw.complete(&req) {
        Ok(resp) if resp.text.trim().is_empty() => failed(
            Some(resp.request_key),
            ItemError {
                kind: "empty_description".into(),
                message: "vision model returned an empty description".into(),
            },
        ),
        Ok(resp) => Description {
            image_id: rec.image_id.clone(),
            text: resp.text,
            request_key: Some(resp.request_key),
            error: None,
        },
        Err(e) => failed(Some(req.key()), ItemError::from_error(&Error::Gateway(e))),
    }
}

/// Step 1 over `records`, in order, without the failure check.
pub(crate) fn describe_images(
    gw: &Gateway,
    records: &[ImageRecord],
    tc: &TextCriterion,
    sink: Sink<'_, Description>,
) -> Vec<Description> {
    fan_out(gw, records, |rec| {
        let d = describe_one(gw, rec, tc);
        sink(&d);
        d
    })
}

fn label_one(gw: &Gateway, desc: &Description, tc: &TextCriterion) -> RawLabel {
    if desc.error.is_some() {
        return RawLabel {
            image_id: desc.image_id.clone(),
            label: String::new(),
            error: Some(ItemError::upstream(Stage::Step1)),
        };
    }
    let req = gw.llm_request(with_input(&tc.step2a_prompt, &desc.text));
    match gw.complete(&req) {
        Ok(resp) => RawLabel {
            image_id: desc.image_id.clone(),
            label: normalize_label(&extract_answer(&resp.text)),
            error: None,
        },
        Err(e) => RawLabel {
            image_id: desc.image_id.clone(),
            label: String::new(),
            error: Some(ItemError::from_error(&Error::Gateway(e))),
        },
    }
}

pub(crate) fn label_descriptions(
    gw: &Gateway,
    descriptions: &[Description],
    tc: &TextCriterion,
    sink: Sink<'_, RawLabel>,
) -> Vec<RawLabel> {
    fan_out(gw, descriptions, |d| {
        let l = label_one(gw, d, tc);
        sink(&l);
        l
    })
}

pub(crate) struct Failures {
    pub ids: Vec<String>,
    pub first_error: Option<String>,
}

impl Failures {
    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Items whose own call failed (upstream failures are not counted again).
pub(crate) fn own_failures<'a>(errors: impl Iterator<Item = (&'a str, Option<&'a ItemError>)>) -> Failures {
    let mut out = Failures { ids: Vec::new(), first_error: None };
    for (id, e) in errors {
        if let Some(e) = e.filter(|e| e.kind != "upstream_failed") {
            out.first_error.get_or_insert_with(|| e.message.clone());
            out.ids.push(id.to_string());
        }
    }
    out
}

pub fn run_step1(gw: &Gateway, manifest: &DatasetManifest, tc: &TextCriterion, cfg: &PipelineConfig) -> Result<Vec<Description>> {
    let out = describe_images(gw, &manifest.records, tc, &|_| {});
    let failed = own_failures(out.iter().map(|d| (d.image_id.as_str(), d.error.as_ref())));
    check_failures(Stage::Step1, &failed, out.len(), cfg.failure_limit)?;
    Ok(out)
}

pub fn run_step2a(gw: &Gateway, descriptions: &[Description], tc: &TextCriterion, cfg: &PipelineConfig) -> Result<Vec<RawLabel>> {
    let out = label_descriptions(gw, descriptions, tc, &|_| {});
    let failed = own_failures(out.iter().map(|l| (l.image_id.as_str(), l.error.as_ref())));
    check_failures(Stage::Step2a, &failed, out.len(), cfg.failure_limit)?;
    Ok(out)
}

/// One Step-2b LLM exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step2bAttempt {
    /// 0 for the single-shot or merge request, 1.. for chunk parts.
    pub part: usize,
    pub attempt: usize,
    pub request_key: Digest,
    pub response: String,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub clusters: ClusterSet,
    pub dictionary_len: usize,
    pub chunked: bool,
    pub parts: usize,
    pub attempts: Vec<Step2bAttempt>,
}

#[derive(Default)]
struct Trace {
    chunked: bool,
    parts: usize,
    attempts: Vec<Step2bAttempt>,
}

fn step2b_prompt(tc: &TextCriterion, entries: &[DictEntry]) -> Result<String> {
    Ok(format!("{}\n\n{}", render_step2b(tc, entries.len())?, entries_prompt_text(entries)))
}

fn is_oversized(e: &Error) -> bool {
    matches!(e, Error::Gateway(GatewayError::OversizedPrompt { .. }))
}

/// Requests a K-name list, re-prompting with a corrective sentence after
/// each malformed answer, `attempts` times in total.
fn enforce_k(
    gw: &Gateway,
    base: &str,
    k: usize,
    attempts: usize,
    part: usize,
    log: &mut Vec<Step2bAttempt>,
) -> Result<ClusterSet> {
    let budget = gw.prompt_budget(ModelKind::Llm);
    let mut prompt = base.to_string();
    let mut responses = Vec::new();
    for attempt in 1..=attempts.max(1) {
        let req = gw.llm_request(prompt.clone());
        let resp = gw.complete(&req)?;
        let parsed = parse_cluster_list(&resp.text, k);
        log.push(Step2bAttempt {
            part,
            attempt,
            request_key: resp.request_key,
            response: resp.text.clone(),
            failure: parsed.as_ref().err().map(ToString::to_string),
        });
        responses.push(resp.text);
        match parsed {
            Ok(set) => return Ok(set),
            Err(failure) => {
                // The attempt counter keeps identical failures from being
                // answered out of the response cache.
                let note = format!("This is attempt {} of {}.", attempt + 1, attempts.max(1));
                prompt = format!("{base}\n\n{} {note}", failure.corrective_message());
                if budget.is_some_and(|b| estimate_tokens(&prompt) > b) {
                    let brief = ParseFailure {
                        offending_lines: Vec::new(),
                        ..failure
                    };
                    prompt = format!("{base}\n\n{} {note}", brief.corrective_message());
                }
            }
        }
    }
    Err(Error::KEnforcementFailed {
        k,
        attempts: attempts.max(1),
        responses,
    })
}

/// Room left for a corrective sentence on retries.
fn corrective_reserve(k: usize) -> usize {
    let sample = ParseFailure {
        required: k,
        found: 9999,
        unique: 9999,
        offending_lines: Vec::new(),
    };
    estimate_tokens(&sample.corrective_message()) + 12
}

fn discover_entries(
    gw: &Gateway,
    entries: &[DictEntry],
    tc: &TextCriterion,
    cfg: &PipelineConfig,
    depth: usize,
    out: &mut Trace,
) -> Result<ClusterSet> {
    let budget = gw.prompt_budget(ModelKind::Llm);
    let prompt = step2b_prompt(tc, entries)?;
    let fits = budget.is_none_or(|b| estimate_tokens(&prompt) + corrective_reserve(tc.k) <= b);
    if fits {
        match enforce_k(gw, &prompt, tc.k, cfg.k_attempts, 0, &mut out.attempts) {
            Err(e) if is_oversized(&e) => {}
            other => return other,
        }
    }
    let budget = budget.unwrap_or_else(|| estimate_tokens(&prompt).saturating_sub(1).max(1));
    let parts = split_entries(tc, entries, budget.saturating_sub(corrective_reserve(tc.k)))?;
    if parts.len() < 2 || depth > 8 {
        return Err(Error::Gateway(GatewayError::OversizedPrompt {
            tokens: estimate_tokens(&prompt),
            budget,
        }));
    }
    info!(parts = parts.len(), entries = entries.len(), "dictionary exceeds prompt budget; chunking");
    out.chunked = true;
    out.parts += parts.len();

    let mut support: std::collections::BTreeMap<String, u64> = Default::default();
    for (i, part) in parts.iter().enumerate() {
        let part_prompt = step2b_prompt(tc, part)?;
        let names = enforce_k(gw, &part_prompt, tc.k, cfg.k_attempts, i + 1, &mut out.attempts)?;
        let weight: u64 = part.iter().map(|e| e.count).sum();
        for n in names.names() {
            *support.entry(n.clone()).or_insert(0) += weight;
        }
    }
    let merged = LabelDictionary::from_counts(support)?.sorted();
    if merged.len() >= entries.len() {
        return Err(Error::Gateway(GatewayError::OversizedPrompt {
            tokens: estimate_tokens(&prompt),
            budget,
        }));
    }
    discover_entries(gw, &merged, tc, cfg, depth + 1, out)
}

/// Greedy split of sorted entries into parts whose prompts fit `budget`.
fn split_entries(tc: &TextCriterion, entries: &[DictEntry], budget: usize) -> Result<Vec<Vec<DictEntry>>> {
    let mut parts: Vec<Vec<DictEntry>> = Vec::new();
    let mut cur: Vec<DictEntry> = Vec::new();
    for e in entries {
        cur.push(e.clone());
        if estimate_tokens(&step2b_prompt(tc, &cur)?) > budget {
            let last = cur.pop().expect("just pushed");
            if cur.is_empty() {
                return Err(Error::Gateway(GatewayError::OversizedPrompt {
                    tokens: estimate_tokens(&step2b_prompt(tc, std::slice::from_ref(&last))?),
                    budget,
                }));
            }
            parts.push(std::mem::take(&mut cur));
            cur.push(last);
        }
    }
    if !cur.is_empty() {
        parts.push(cur);
    }
    Ok(parts)
}

/// Step 2b: K cluster names from the label dictionary.
pub fn discover_clusters(gw: &Gateway, dict: &LabelDictionary, tc: &TextCriterion, cfg: &PipelineConfig) -> Result<Discovery> {
    if dict.is_empty() {
        return Err(Error::EmptyDictionary {
            threshold: cfg.dictionary_threshold,
        });
    }
    let mut trace = Trace::default();
    let clusters = discover_entries(gw, &dict.sorted(), tc, cfg, 0, &mut trace)?;
    Ok(Discovery {
        clusters,
        dictionary_len: dict.len(),
        chunked: trace.chunked,
        parts: trace.parts,
        attempts: trace.attempts,
    })
}

fn assign_one(gw: &Gateway, desc: &Description, prompt: &str, clusters: &ClusterSet, cfg: &PipelineConfig) -> Assignment {
    let (raw_answer, error) = if desc.error.is_some() {
        (String::new(), Some(ItemError::upstream(Stage::Step1)))
    } else {
        match gw.complete(&gw.llm_request(with_input(prompt, &desc.text))) {
            Ok(resp) => (extract_answer(&resp.text), None),
            Err(e) => (String::new(), Some(ItemError::from_error(&Error::Gateway(e)))),
        }
    };
    let m = match_answer(&raw_answer, clusters, cfg.fuzzy_ratio);
    let kind = if error.is_some() { MatchKind::Fallback } else { m.kind };
    Assignment {
        image_id: desc.image_id.clone(),
        cluster_index: m.index,
        matched_name: clusters.names()[m.index].clone(),
        raw_answer,
        match_kind: kind,
        error,
    }
}

pub(crate) fn assign_descriptions(
    gw: &Gateway,
    descriptions: &[Description],
    clusters: &ClusterSet,
    tc: &TextCriterion,
    cfg: &PipelineConfig,
    sink: Sink<'_, Assignment>,
) -> Result<Vec<Assignment>> {
    let prompt = render_step3(tc, clusters)?;
    Ok(fan_out(gw, descriptions, |d| {
        let a = assign_one(gw, d, &prompt, clusters, cfg);
        sink(&a);
        a
    }))
}

/// Step 3. Every description receives an assignment; failed calls fall
/// back like unmatched answers and are reported through `error`.
pub fn run_step3(
    gw: &Gateway,
    descriptions: &[Description],
    clusters: &ClusterSet,
    tc: &TextCriterion,
    cfg: &PipelineConfig,
) -> Result<Vec<Assignment>> {
    let out = assign_descriptions(gw, descriptions, clusters, tc, cfg, &|_| {})?;
    let failed = own_failures(out.iter().map(|a| (a.image_id.as_str(), a.error.as_ref())));
    check_failures(Stage::Step3, &failed, out.len(), cfg.failure_limit)?;
    Ok(out)
}

/// Fraction of assignments that fell back to nearest-name matching.
pub fn fallback_rate(assignments: &[Assignment]) -> f64 {
    if assignments.is_empty() {
        return 0.0;
    }
    let n = assignments.iter().filter(|a| a.match_kind == MatchKind::Fallback).count();
    n as f64 / assignments.len() as f64
}
