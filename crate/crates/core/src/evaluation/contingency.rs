use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Count matrix with rows = predicted clusters, columns = truth classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    pub counts: Vec<Vec<u64>>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl Contingency {
    /// Rows and columns are the sorted distinct labels of each side.
    pub fn from_labels<P: Ord + Clone, T: Ord + Clone>(pred: &[P], truth: &[T]) -> Result<(Self, Vec<P>, Vec<T>)> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        let rows = index_of(pred);
        let cols = index_of(truth);
        let pi: Vec<usize> = pred.iter().map(|p| rows[p]).collect();
        let ti: Vec<usize> = truth.iter().map(|t| cols[t]).collect();
        let c = Self::from_indices(&pi, rows.len(), &ti, cols.len())?;
        Ok((c, rows.into_keys().collect(), cols.into_keys().collect()))
    }

    /// Explicit universes, so empty clusters or unused classes keep a row
    /// or column.
    pub fn from_indices(pred: &[usize], n_rows: usize, truth: &[usize], n_cols: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        let mut counts = vec![vec![0u64; n_cols]; n_rows];
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= n_rows || t >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "label index ({p}, {t}) outside a {n_rows}x{n_cols} contingency"
                )));
            }
            counts[p][t] += 1;
        }
        Ok(Contingency { counts, n_rows, n_cols })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n_cols)
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// True when the two partitions are equal up to relabeling.
    pub fn is_bijective(&self) -> bool {
        let rows_ok = self
            .counts
            .iter()
            .all(|r| r.iter().filter(|&&c| c > 0).count() <= 1);
        let cols_ok = (0..self.n_cols).all(|j| self.counts.iter().filter(|r| r[j] > 0).count() <= 1);
        rows_ok && cols_ok
    }
}

fn index_of<L: Ord + Clone>(labels: &[L]) -> BTreeMap<L, usize> {
    let mut map: BTreeMap<L, usize> = labels.iter().map(|l| (l.clone(), 0)).collect();
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_and_sums() {
        let (c, rows, cols) = Contingency::from_labels(&[0, 0, 1], &["b", "a", "a"]).unwrap();
        assert_eq!(rows, [0, 1]);
        assert_eq!(cols, ["a", "b"]);
        assert_eq!(c.counts, vec![vec![1, 1], vec![1, 0]]);
        assert_eq!(c.total(), 3);
        assert_eq!(c.row_sums(), [2, 1]);
        assert_eq!(c.col_sums(), [2, 1]);
        assert!(Contingency::from_labels(&[0], &[0, 1]).is_err());
    }
}
