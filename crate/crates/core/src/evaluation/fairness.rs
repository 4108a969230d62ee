use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::scalar::{ratio, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFairness<T> {
    pub cluster_index: usize,
    pub name: String,
    /// Images in this cluster that carry the attribute.
    pub total: u64,
    pub counts: BTreeMap<String, u64>,
    pub ratios: BTreeMap<String, T>,
    /// Largest minus smallest group ratio (0 for an empty cluster).
    pub disparity: T,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport<T> {
    pub attribute: String,
    pub flag_threshold: T,
    /// Every group value seen anywhere in the evaluated images.
    pub groups: Vec<String>,
    pub clusters: Vec<ClusterFairness<T>>,
    pub n_included: u64,
    /// Images without the attribute, excluded from the ratios.
    pub n_missing: u64,
}

impl<T: Scalar> FairnessReport<T> {
    pub fn flagged(&self) -> impl Iterator<Item = &ClusterFairness<T>> {
        self.clusters.iter().filter(|c| c.flagged)
    }

    pub fn cluster(&self, name: &str) -> Option<&ClusterFairness<T>> {
        self.clusters.iter().find(|c| c.name == name)
    }
}

/// Builds a report from (cluster index, group) pairs. Ratios are formed
/// from integer counts, so disparities on exact fractions compare exactly
/// against the threshold.
pub fn fairness_from_groups<T: Scalar>(
    attribute: &str,
    cluster_names: &[String],
    items: &[(usize, Option<String>)],
    flag_threshold: T,
) -> Result<FairnessReport<T>> {
    let groups: BTreeSet<&String> = items.iter().filter_map(|(_, g)| g.as_ref()).collect();
    if groups.is_empty() {
        return Err(Error::AttributeAbsent(attribute.to_string()));
    }
    let mut counts: Vec<BTreeMap<String, u64>> = vec![
        groups.iter().map(|g| ((*g).clone(), 0)).collect();
        cluster_names.len()
    ];
    let mut n_missing = 0;
    for (cluster, group) in items {
        let Some(row) = counts.get_mut(*cluster) else {
            return Err(Error::InvalidArgument(format!(
                "cluster index {cluster} out of range for {} clusters",
                cluster_names.len()
            )));
        };
        match group {
            Some(g) => *row.get_mut(g).expect("group collected above") += 1,
            None => n_missing += 1,
        }
    }
    let clusters = counts
        .into_iter()
        .enumerate()
        .map(|(i, counts)| {
            let total: u64 = counts.values().sum();
            let (ratios, disparity) = if total == 0 {
                (counts.keys().map(|g| (g.clone(), T::zero())).collect(), T::zero())
            } else {
                let hi = counts.values().copied().max().unwrap_or(0);
                let lo = counts.values().copied().min().unwrap_or(0);
                (
                    counts.iter().map(|(g, &c)| (g.clone(), ratio::<T>(c, total))).collect(),
                    ratio::<T>(hi - lo, total),
                )
            };
            let flagged = disparity > flag_threshold;
            ClusterFairness {
                cluster_index: i,
                name: cluster_names[i].clone(),
                total,
                counts,
                ratios,
                disparity,
                flagged,
            }
        })
        .collect::<Vec<_>>();
    let n_included = clusters.iter().map(|c| c.total).sum();
    Ok(FairnessReport {
        attribute: attribute.to_string(),
        flag_threshold,
        groups: groups.into_iter().cloned().collect(),
        clusters,
        n_included,
        n_missing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityChange<T> {
    pub name: String,
    pub parent: Option<T>,
    pub child: Option<T>,
}

/// Pairs clusters of two reports by name; unmatched names appear with one
/// side missing.
pub fn compare_fairness<T: Scalar>(parent: &FairnessReport<T>, child: &FairnessReport<T>) -> Vec<DisparityChange<T>> {
    let mut out: Vec<DisparityChange<T>> = parent
        .clusters
        .iter()
        .map(|p| DisparityChange {
            name: p.name.clone(),
            parent: Some(p.disparity.clone()),
            child: child.cluster(&p.name).map(|c| c.disparity.clone()),
        })
        .collect();
    for c in &child.clusters {
        if parent.cluster(&c.name).is_none() {
            out.push(DisparityChange {
                name: c.name.clone(),
                parent: None,
                child: Some(c.disparity.clone()),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn items(spec: &[(usize, &str, usize)]) -> Vec<(usize, Option<String>)> {
        spec.iter()
            .flat_map(|&(c, g, n)| {
                let g = (!g.is_empty()).then(|| g.to_string());
                std::iter::repeat_n((c, g), n)
            })
            .collect()
    }

    #[test]
    fn twelve_eight_is_flagged() {
        let names = vec!["craftsman".to_string(), "artist".to_string()];
        let it = items(&[(0, "male", 12), (0, "female", 8), (1, "male", 10), (1, "female", 10), (1, "", 3)]);
        let r = fairness_from_groups("gender", &names, &it, 0.10f64).unwrap();
        assert_eq!(r.clusters[0].disparity, 0.2);
        assert!(r.clusters[0].flagged);
        assert_eq!(r.clusters[1].disparity, 0.0);
        assert!(!r.clusters[1].flagged);
        assert_eq!(r.n_missing, 3);
        assert_eq!(r.n_included, 40);
        let exact = fairness_from_groups("gender", &names, &it, Ratio::new(1i128, 10)).unwrap();
        assert_eq!(exact.clusters[0].disparity, Ratio::new(1, 5));
        let s: Ratio<i128> = exact.clusters[0].ratios.values().cloned().sum();
        assert_eq!(s, Ratio::from_integer(1));
    }

    #[test]
    fn boundary_is_not_flagged() {
        let names = vec!["c".to_string()];
        let it = items(&[(0, "m", 11), (0, "f", 9)]);
        let r = fairness_from_groups("g", &names, &it, 0.10f64).unwrap();
        assert_eq!(r.clusters[0].disparity, 0.1);
        assert!(!r.clusters[0].flagged);
    }

    #[test]
    fn absent_attribute() {
        let names = vec!["c".to_string()];
        let err = fairness_from_groups("gender", &names, &items(&[(0, "", 4)]), 0.1f64).unwrap_err();
        assert_eq!(err.kind(), "attribute_absent");
    }

    #[test]
    fn comparison_pairs_by_name() {
        let a = fairness_from_groups("g", &["x".into(), "y".into()], &items(&[(0, "m", 3), (1, "f", 1)]), 0.1f64).unwrap();
        let b = fairness_from_groups("g", &["y".into(), "z".into()], &items(&[(0, "m", 1), (0, "f", 1), (1, "m", 1)]), 0.1f64).unwrap();
        let cmp = compare_fairness(&a, &b);
        assert_eq!(cmp.len(), 3);
        assert_eq!(cmp[1].name, "y");
        assert_eq!(cmp[1].parent, Some(1.0));
        assert_eq!(cmp[1].child, Some(0.0));
        assert_eq!(cmp[2].parent, None);
    }
}
