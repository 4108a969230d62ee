use serde::{Deserialize, Serialize};

use super::contingency::Contingency;
use super::metrics::{accuracy_from_contingency, ari_from_contingency, nmi_from_contingency, MappingMode};
use super::scalar::RealScalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappedCluster {
    pub cluster: String,
    pub class: Option<String>,
    pub overlap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    pub acc: T,
    pub nmi: T,
    pub ari: T,
    pub n_evaluated: u64,
    pub mapping_mode: MappingMode,
    /// Row names of `confusion` (predicted clusters).
    pub clusters: Vec<String>,
    /// Column names of `confusion` (truth classes).
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub mapping: Vec<MappedCluster>,
}

/// Scores cluster indices against class indices over explicit name
/// universes (rows and columns may be empty).
pub fn evaluate<T: RealScalar>(
    pred: &[usize],
    clusters: &[String],
    truth: &[usize],
    classes: &[String],
    mode: MappingMode,
) -> Result<EvalReport<T>> {
    if pred.is_empty() {
        return Err(Error::NoLabeledImages);
    }
    let c = Contingency::from_indices(pred, clusters.len(), truth, classes.len())?;
    let a = accuracy_from_contingency::<T>(&c, mode);
    let mapping = a
        .mapping
        .iter()
        .enumerate()
        .map(|(i, m)| MappedCluster {
            cluster: clusters[i].clone(),
            class: m.map(|j| classes[j].clone()),
            overlap: m.map_or(0, |j| c.counts[i][j]),
        })
        .collect();
    Ok(EvalReport {
        acc: a.acc,
        nmi: nmi_from_contingency(&c),
        ari: ari_from_contingency(&c),
        n_evaluated: c.total(),
        mapping_mode: mode,
        clusters: clusters.to_vec(),
        classes: classes.to_vec(),
        confusion: c.counts,
        mapping,
    })
}

impl<T> EvalReport<T> {
    /// Tab-separated grid: header row of class names, one row per cluster.
    pub fn confusion_tsv(&self) -> String {
        let mut out = String::from("cluster");
        for c in &self.classes {
            out.push('\t');
            out.push_str(&tsv_cell(c));
        }
        out.push('\n');
        for (name, row) in self.clusters.iter().zip(&self.confusion) {
            out.push_str(&tsv_cell(name));
            for v in row {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn tsv_cell(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Parses a grid written by [`EvalReport::confusion_tsv`].
pub fn parse_confusion_tsv(text: &str) -> Result<(Vec<String>, Vec<String>, Vec<Vec<u64>>)> {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty confusion grid".into()))?;
    let classes: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut clusters = Vec::new();
    let mut grid = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split('\t');
        clusters.push(cells.next().unwrap_or_default().to_string());
        let row = cells
            .map(|c| c.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: "confusion grid".into(),
                line: i + 2,
                message: e.to_string(),
            })?;
        if row.len() != classes.len() {
            return Err(Error::Parse {
                path: "confusion grid".into(),
                line: i + 2,
                message: format!("expected {} counts, found {}", classes.len(), row.len()),
            });
        }
        grid.push(row);
    }
    Ok((clusters, classes, grid))
}
