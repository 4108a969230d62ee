//! Maximum-weight assignment on a rectangular weight matrix.
//!
//! The matrix is zero-padded to square and solved with the O(n³)
//! shortest-augmenting-path method. Among all optimal assignments the
//! lexicographically smallest one (by row, over padded column indices) is
//! returned: every optimal assignment uses only edges that are tight under
//! the final dual, so each row in turn takes the smallest tight column that
//! an alternating path through later rows can free.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Column assigned to each input row; `None` when the row got a padding column.
    pub row_to_col: Vec<Option<usize>>,
    pub total: u64,
}

pub fn max_weight_matching(weights: &[Vec<u64>], n_cols: usize) -> Matching {
    let n_rows = weights.len();
    let n = n_rows.max(n_cols);
    if n == 0 {
        return Matching {
            row_to_col: Vec::new(),
            total: 0,
        };
    }
    let cost = |i: usize, j: usize| -> i64 {
        if i < n_rows && j < n_cols {
            -(weights[i][j] as i64)
        } else {
            0
        }
    };
    let (mut assign, u, v) = solve(n, &cost);
    let tight = |i: usize, j: usize| u[i + 1] + v[j + 1] == cost(i, j);
    lexicographic_fix(n, &mut assign, &tight);

    let row_to_col: Vec<Option<usize>> = (0..n_rows)
        .map(|i| Some(assign[i]).filter(|&j| j < n_cols))
        .collect();
    let total = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| weights[i][j]))
        .sum();
    Matching { row_to_col, total }
}

/// Minimum-cost perfect matching. Returns row→column plus 1-indexed
/// potentials (u for rows, v for columns) with u[i]+v[j] ≤ cost(i,j),
/// tight on the matching.
fn solve(n: usize, cost: &dyn Fn(usize, usize) -> i64) -> (Vec<usize>, Vec<i64>, Vec<i64>) {
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    (assign, u, v)
}

fn lexicographic_fix(n: usize, assign: &mut [usize], tight: &dyn Fn(usize, usize) -> bool) {
    for i in 0..n {
        let freed = assign[i];
        // Columns that rows after i can give up while staying perfect,
        // with the (row, column) step that frees each one.
        let mut available = vec![false; n];
        let mut parent = vec![(usize::MAX, usize::MAX); n];
        let mut row_seen = vec![false; n];
        available[freed] = true;
        let mut queue = std::collections::VecDeque::from([freed]);
        while let Some(a) = queue.pop_front() {
            for r in i + 1..n {
                if !row_seen[r] && tight(r, a) {
                    row_seen[r] = true;
                    let c = assign[r];
                    if !available[c] {
                        available[c] = true;
                        parent[c] = (r, a);
                        queue.push_back(c);
                    }
                }
            }
        }
        let Some(best) = (0..n).find(|&j| available[j] && tight(i, j)) else {
            continue;
        };
        if best == freed {
            continue;
        }
        assign[i] = best;
        let mut col = best;
        while col != freed {
            let (r, a) = parent[col];
            assign[r] = a;
            col = a;
        }
    }
}
