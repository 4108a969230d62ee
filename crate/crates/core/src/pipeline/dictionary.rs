use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::RawLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictEntry {
    pub label: String,
    pub count: u64,
}

/// Normalized raw label → occurrence count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDictionary {
    entries: BTreeMap<String, u64>,
}

impl LabelDictionary {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for l in labels {
            *entries.entry(l.into()).or_insert(0) += 1;
        }
        LabelDictionary { entries }
    }

    /// Entries must have positive counts.
    pub fn from_counts<I, S>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (l, c) in counts {
            let l = l.into();
            if c == 0 {
                return Err(Error::InvalidArgument(format!("dictionary count for {l:?} is zero")));
            }
            *entries.entry(l).or_insert(0) += c;
        }
        Ok(LabelDictionary { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<u64> {
        self.entries.get(label).copied()
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn map(&self) -> &BTreeMap<String, u64> {
        &self.entries
    }

    /// Drops entries with count below `threshold`; 0 keeps everything.
    pub fn filter(&self, threshold: u64) -> Result<Self> {
        let entries: BTreeMap<String, u64> = self
            .entries
            .iter()
            .filter(|(_, &c)| c >= threshold)
            .map(|(l, &c)| (l.clone(), c))
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyDictionary { threshold });
        }
        Ok(LabelDictionary { entries })
    }

    /// Descending count, then label.
    pub fn sorted(&self) -> Vec<DictEntry> {
        let mut v: Vec<DictEntry> = self
            .entries
            .iter()
            .map(|(l, &c)| DictEntry {
                label: l.clone(),
                count: c,
            })
            .collect();
        v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
        v
    }

    /// Prompt form: `{'label': count, ...}` in sorted order.
    pub fn to_prompt_text(&self) -> String {
        entries_prompt_text(&self.sorted())
    }
}

pub fn build_dictionary(raw_labels: &[RawLabel]) -> LabelDictionary {
    LabelDictionary::from_labels(raw_labels.iter().map(|r| r.label.clone()))
}

pub fn filter_dictionary(dict: &LabelDictionary, threshold: u64) -> Result<LabelDictionary> {
    dict.filter(threshold)
}

fn quote(label: &str) -> String {
    if label.contains('\'') && !label.contains('"') {
        format!("\"{label}\"")
    } else {
        format!("'{}'", label.replace('\\', "\\\\").replace('\'', "\\'"))
    }
}

pub(crate) fn entries_prompt_text(entries: &[DictEntry]) -> String {
    let items: Vec<String> = entries
        .iter()
        .map(|e| format!("{}: {}", quote(&e.label), e.count))
        .collect();
    format!("{{{}}}", items.join(", "))
}
