#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use critclust::gateway::{Gateway, GatewayConfig, Rule, ScriptedBackend};
use critclust::ingest::{scan_directory, DatasetManifest, Layout};
use critclust::pipeline::RunStore;
use critclust::prompts::TextCriterion;

pub const CLASSES: [&str; 3] = ["bird", "cat", "dog"];

/// Writes `per_class` fake images per class under `root/<class>/`. The
/// bytes are never decoded, so a PNG signature plus a tag is enough.
pub fn write_images(root: &Path, per_class: usize) -> DatasetManifest {
    for class in CLASSES {
        let dir = root.join(class);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let mut bytes = b"\x89PNG\r\n\x1a\n".to_vec();
            bytes.extend_from_slice(format!("class={class} idx={i:04}").as_bytes());
            fs::write(dir.join(format!("{class}_{i:04}.png")), bytes).unwrap();
        }
    }
    scan_directory(root, Layout::ClassSubdirs).unwrap()
}

pub fn criterion() -> TextCriterion {
    TextCriterion {
        criterion_id: "animals".into(),
        description: "Animal species".into(),
        step1_prompt: "STEP1 Describe the main animal in the image.".into(),
        step2a_prompt: "STEP2A Name the animal described below. Answer in the format \"Answer: {animal}\".".into(),
        step2b_template: "STEP2B You are given [__LEN__] animal labels with counts. Cluster them into [__NUM_CLASSES_CLUSTER__] species, one per line as \"{index}: {species}\".".into(),
        step3_template: "STEP3 Choose the species of the animal from [__CLASSES__]. Answer in the format \"Answer: {species}\".".into(),
        k: 3,
    }
}

pub fn criterion_k(k: usize) -> TextCriterion {
    TextCriterion { k, ..criterion() }
}

pub fn description(class: &str) -> String {
    format!("The photo shows a {class} sitting in the sun.")
}

/// Rules for a pipeline that recovers the classes exactly.
pub fn perfect_rules() -> Vec<Rule> {
    let mut rules = Vec::new();
    for class in CLASSES {
        rules.push(Rule::vlm(&format!("class={class} "), &description(class)));
        let mut cap = class.to_string();
        cap[..1].make_ascii_uppercase();
        rules.push(Rule::llm(&["STEP2A", &format!("a {class} ")], &format!("Answer: {cap}")));
        rules.push(Rule::llm(&["STEP3", &format!("a {class} ")], &format!("Reasoning first.\nAnswer: {class}")));
    }
    rules.push(Rule::llm(&["STEP2B"], "1: cat\n2: dog\n3: bird"));
    rules
}

pub fn perfect_backend() -> ScriptedBackend {
    ScriptedBackend::new(perfect_rules())
}

/// Gateway defaults with millisecond backoff so failure tests stay fast.
pub fn fast_config() -> GatewayConfig {
    GatewayConfig {
        base_backoff: Duration::from_millis(1),
        max_backoff: Duration::from_millis(4),
        ..GatewayConfig::default()
    }
}

pub fn gateway(backend: impl critclust::gateway::Backend + 'static, store: Option<&RunStore>, record: bool) -> Gateway {
    let mut cfg = fast_config();
    if let Some(s) = store {
        cfg = s.gateway_config(cfg);
    }
    cfg.record = record;
    Gateway::new(Arc::new(backend), cfg)
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Paths whose contents differ (or exist on one side only).
pub fn diff(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) -> Vec<PathBuf> {
    let mut keys: Vec<&PathBuf> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}

/// Exhaustive injective-mapping accuracy: try every injective map from the
/// smaller label set into the larger one.
pub fn brute_force_acc(pred: &[usize], truth: &[usize]) -> (u64, u64) {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0u64; kt]; kp];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    fn go(row: usize, counts: &[Vec<u64>], used: &mut Vec<bool>, sum: u64, best: &mut u64) {
        if row == counts.len() {
            *best = (*best).max(sum);
            return;
        }
        // Row left unmatched.
        go(row + 1, counts, used, sum, best);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                go(row + 1, counts, used, sum + counts[row][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = 0;
    go(0, &counts, &mut vec![false; kt], 0, &mut best);
    (best, pred.len() as u64)
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI from its definition: I(P;T) / sqrt(H(P) H(T)), 0 when either
/// entropy vanishes.
pub fn oracle_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut pc: BTreeMap<usize, u64> = BTreeMap::new();
    let mut tc: BTreeMap<usize, u64> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *joint.entry((p, t)).or_default() += 1;
        *pc.entry(p).or_default() += 1;
        *tc.entry(t).or_default() += 1;
    }
    let hp = entropy(pc.values().copied(), n);
    let ht = entropy(tc.values().copied(), n);
    if hp == 0.0 || ht == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (&(p, t), &c) in &joint {
        let pxy = c as f64 / n;
        let px = pc[&p] as f64 / n;
        let py = tc[&t] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    (mi / (hp * ht).sqrt()).clamp(0.0, 1.0)
}

/// ARI by enumerating all pairs: a = together in both, b = together in
/// pred only, c = together in truth only, d = apart in both.
pub fn oracle_ari(pred: &[usize], truth: &[usize]) -> num_rational::Ratio<i128> {
    use num_rational::Ratio;
    let n = pred.len();
    let (mut a, mut b, mut c, mut d) = (0i128, 0i128, 0i128, 0i128);
    for i in 0..n {
        for j in i + 1..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => a += 1,
                (true, false) => b += 1,
                (false, true) => c += 1,
                (false, false) => d += 1,
            }
        }
    }
    let den = (a + b) * (b + d) + (a + c) * (c + d);
    if den == 0 {
        // All pairs agree in kind on both sides: identical up to labels.
        return if b == 0 && c == 0 { Ratio::from_integer(1) } else { Ratio::from_integer(0) };
    }
    Ratio::new(2 * (a * d - b * c), den)
}

/// Textbook Levenshtein distance by full DP table.
pub fn oracle_edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        t[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            t[i][j] = (t[i - 1][j] + 1).min(t[i][j - 1] + 1).min(t[i - 1][j - 1] + cost);
        }
    }
    t[a.len()][b.len()]
}

/// Labels 0..k for `n` items from a tiny LCG, so oracles see varied input
/// without sharing the crate's generator.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    pub fn labels(&mut self, n: usize, k: usize) -> Vec<usize> {
        (0..n).map(|_| (self.next() % k as u64) as usize).collect()
    }
}
