//! Maps a Step-3 answer onto one of the K cluster names.

use super::types::MatchKind;
use crate::prompts::{normalize_label, ClusterSet};

/// Default bound on edit distance / longer length for a fuzzy match.
pub const DEFAULT_FUZZY_RATIO: f64 = 0.3;

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the longer length (0 for two empty strings).
pub fn edit_ratio(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub index: usize,
    pub kind: MatchKind,
}

/// Exact, then unique substring (either direction), then fuzzy with a
/// unique minimizer within `fuzzy_ratio`, else the nearest name by edit
/// distance. Ties go to the earlier cluster.
pub fn match_answer(answer: &str, clusters: &ClusterSet, fuzzy_ratio: f64) -> Match {
    let names = clusters.names();
    let a = normalize_label(answer);

    if let Some(index) = names.iter().position(|n| *n == a) {
        return Match {
            index,
            kind: MatchKind::Exact,
        };
    }

    if !a.is_empty() {
        let mut hits = names
            .iter()
            .enumerate()
            .filter(|(_, n)| a.contains(n.as_str()) || n.contains(a.as_str()));
        if let (Some((index, _)), None) = (hits.next(), hits.next()) {
            return Match {
                index,
                kind: MatchKind::Substring,
            };
        }
    }

    let distances: Vec<usize> = names.iter().map(|n| edit_distance(&a, n)).collect();
    let ratios: Vec<f64> = names.iter().map(|n| edit_ratio(&a, n)).collect();
    let best = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    if best <= fuzzy_ratio {
        let mut at = ratios.iter().enumerate().filter(|(_, &r)| r == best);
        if let (Some((index, _)), None) = (at.next(), at.next()) {
            return Match {
                index,
                kind: MatchKind::Fuzzy,
            };
        }
    }

    let min = distances.iter().copied().min().unwrap_or(0);
    Match {
        index: distances.iter().position(|&d| d == min).unwrap_or(0),
        kind: MatchKind::Fallback,
    }
}
