use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::contingency::Contingency;
use super::hungarian::max_weight_matching;
use super::scalar::{ratio, RealScalar, Scalar};
use crate::error::{Error, Result};

/// How predicted clusters are mapped onto truth classes for accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMode {
    /// One-to-one, maximum total overlap.
    #[default]
    Injective,
    /// Each cluster takes its majority class; several clusters may share one.
    ManyToOne,
}

impl FromStr for MappingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "injective" | "hungarian" => Ok(MappingMode::Injective),
            "many-to-one" | "many_to_one" | "majority" => Ok(MappingMode::ManyToOne),
            _ => Err(Error::InvalidArgument(format!("unknown mapping mode {s:?}"))),
        }
    }
}

impl fmt::Display for MappingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MappingMode::Injective => "injective",
            MappingMode::ManyToOne => "many-to-one",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy<T> {
    pub acc: T,
    /// Truth column for each contingency row.
    pub mapping: Vec<Option<usize>>,
    pub matched: u64,
}

pub fn accuracy_from_contingency<T: Scalar>(c: &Contingency, mode: MappingMode) -> Accuracy<T> {
    let mapping = match mode {
        MappingMode::Injective => max_weight_matching(&c.counts, c.n_cols).row_to_col,
        MappingMode::ManyToOne => c
            .counts
            .iter()
            .map(|row| {
                let best = row.iter().copied().max().unwrap_or(0);
                row.iter().position(|&x| x == best && x > 0)
            })
            .collect(),
    };
    let matched: u64 = mapping
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| c.counts[i][j]))
        .sum();
    let total = c.total();
    let acc = if total == 0 { T::zero() } else { ratio(matched, total) };
    Accuracy { acc, mapping, matched }
}

/// Mutual information normalized by the geometric mean of the two
/// entropies; 0 when either side has zero entropy.
pub fn nmi_from_contingency<T: RealScalar>(c: &Contingency) -> T {
    let n = c.total();
    if n == 0 {
        return T::zero();
    }
    let nt = T::from_count(n);
    let entropy = |sums: &[u64]| -> T {
        sums.iter().filter(|&&s| s > 0).fold(T::zero(), |acc, &s| {
            let p = T::from_count(s) / nt;
            acc - p * p.ln()
        })
    };
    let rows = c.row_sums();
    let cols = c.col_sums();
    let hu = entropy(&rows);
    let hv = entropy(&cols);
    if hu <= T::zero() || hv <= T::zero() {
        return T::zero();
    }
    let mut mi = T::zero();
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij_t = T::from_count(nij);
            let inner = nt * nij_t / (T::from_count(rows[i]) * T::from_count(cols[j]));
            mi = mi + nij_t / nt * inner.ln();
        }
    }
    let v = mi / (hu * hv).sqrt();
    v.max(T::zero()).min(T::one())
}

fn pairs(x: u64) -> u64 {
    x * x.saturating_sub(1) / 2
}

/// Adjusted Rand index over pair counts. When the adjustment denominator
/// vanishes the result is 1 for identical partitions and 0 otherwise.
pub fn ari_from_contingency<T: Scalar>(c: &Contingency) -> T {
    let total_pairs = pairs(c.total());
    let index: u64 = c.counts.iter().flatten().map(|&x| pairs(x)).sum();
    let sa: u64 = c.row_sums().into_iter().map(pairs).sum();
    let sb: u64 = c.col_sums().into_iter().map(pairs).sum();
    let degenerate = |c: &Contingency| if c.is_bijective() { T::one() } else { T::zero() };
    if total_pairs == 0 {
        return degenerate(c);
    }
    let expected = T::from_count(sa) * T::from_count(sb) / T::from_count(total_pairs);
    let max = (T::from_count(sa) + T::from_count(sb)) / T::from_count(2);
    let den = max - expected.clone();
    if den == T::zero() {
        return degenerate(c);
    }
    (T::from_count(index) - expected) / den
}

/// Accuracy under the injective mapping, with the mapping expressed in
/// labels (`None` where a cluster maps to no class).
pub fn hungarian_accuracy<P, L, T>(pred: &[P], truth: &[L]) -> Result<(T, Vec<(P, Option<L>)>, Contingency)>
where
    P: Ord + Clone,
    L: Ord + Clone,
    T: Scalar,
{
    if pred.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let (c, rows, cols) = Contingency::from_labels(pred, truth)?;
    let a = accuracy_from_contingency::<T>(&c, MappingMode::Injective);
    let mapping = rows
        .into_iter()
        .zip(a.mapping)
        .map(|(r, m)| (r, m.map(|j| cols[j].clone())))
        .collect();
    Ok((a.acc, mapping, c))
}

pub fn nmi<P: Ord + Clone, L: Ord + Clone, T: RealScalar>(pred: &[P], truth: &[L]) -> Result<T> {
    if pred.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let (c, _, _) = Contingency::from_labels(pred, truth)?;
    Ok(nmi_from_contingency(&c))
}

pub fn ari<P: Ord + Clone, L: Ord + Clone, T: Scalar>(pred: &[P], truth: &[L]) -> Result<T> {
    let (c, _, _) = Contingency::from_labels(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::TooFewItems {
            needed: 2,
            got: pred.len(),
        });
    }
    Ok(ari_from_contingency(&c))
}
