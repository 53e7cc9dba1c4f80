//! Hungarian cluster-to-class alignment and the accuracy metrics built on it.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// One-to-one matching of `min(R, C)` rows to columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs in ascending row order.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matched entries of the original matrix.
    pub total: f64,
}

impl Assignment {
    /// Column matched to each row (`None` for unmatched rows).
    pub fn row_to_col(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for &(r, c) in &self.pairs {
            out[r] = Some(c);
        }
        out
    }
}

/// Optimal assignment on a rectangular cost matrix.
///
/// The matrix is zero-padded to square. Among optimal matchings the one whose
/// (padded) row→column sequence is lexicographically smallest is returned, so
/// the result does not depend on solver internals.
pub fn hungarian(cost: &Matrix, sense: Sense) -> Result<Assignment> {
    let (r, c) = (cost.rows(), cost.cols());
    if r == 0 || c == 0 {
        return Err(Error::param("assignment matrix must be non-empty"));
    }
    for i in 0..r {
        if cost.row(i).iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "assignment cost", row: i });
        }
    }
    let n = r.max(c);
    let sign = match sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    let mut square = Matrix::zeros(n, n);
    for i in 0..r {
        for j in 0..c {
            square.set(i, j, sign * cost.get(i, j));
        }
    }
    let row_to_col = solve_square(&square);
    let pairs: Vec<(usize, usize)> = row_to_col
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < r && j < c)
        .map(|(i, &j)| (i, j))
        .collect();
    let total = pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
    Ok(Assignment { pairs, total })
}

/// Shortest-augmenting-path Hungarian method followed by a lexicographic
/// refinement over the tight (zero reduced cost) edges.
fn solve_square(a: &Matrix) -> Vec<usize> {
    let n = a.rows();
    // 1-based potentials; p[j] = row matched to column j, p[0] is the free slot.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a.get(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut row_to_col = vec![0usize; n];
    let mut owner = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
        owner[j - 1] = p[j] - 1;
    }

    let scale = a.as_slice().iter().fold(1.0f64, |m, x| m.max(libm::fabs(*x)));
    let tol = 1e-9 * scale;
    let tight = |i: usize, j: usize| libm::fabs(a.get(i, j) - u[i + 1] - v[j + 1]) <= tol;

    for i in 0..n {
        for j in 0..n {
            if j == row_to_col[i] {
                break;
            }
            if !tight(i, j) || owner[j] < i {
                continue;
            }
            let target = row_to_col[i];
            // Alternating path from owner[j] to the column that row i would release.
            let start = owner[j];
            let mut parent_col = vec![usize::MAX; n];
            let mut seen_col = vec![false; n];
            seen_col[j] = true;
            let mut queue = VecDeque::from([start]);
            let mut via = vec![usize::MAX; n];
            let mut found = None;
            'bfs: while let Some(r) = queue.pop_front() {
                for c in 0..n {
                    if seen_col[c] || !tight(r, c) {
                        continue;
                    }
                    if c == target {
                        parent_col[c] = r;
                        found = Some(c);
                        break 'bfs;
                    }
                    if owner[c] <= i {
                        continue;
                    }
                    seen_col[c] = true;
                    parent_col[c] = r;
                    via[owner[c]] = c;
                    queue.push_back(owner[c]);
                }
            }
            if let Some(mut c) = found {
                // Walk back: each row on the path takes the column that led past it.
                loop {
                    let r = parent_col[c];
                    let prev = row_to_col[r];
                    row_to_col[r] = c;
                    owner[c] = r;
                    if r == start {
                        break;
                    }
                    c = via[r];
                    debug_assert_eq!(c, prev);
                }
                row_to_col[i] = j;
                owner[j] = i;
                break;
            }
        }
    }
    row_to_col
}

/// Accuracy report for one partition.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub n_old: usize,
    pub n_new: usize,
    pub labeled_acc: Option<f64>,
    pub k_hat: Option<usize>,
    pub err: Option<f64>,
    /// Class matched to each predicted cluster.
    pub assignment: Vec<Option<usize>>,
}

fn contingency(pred: &[usize], truth: &[usize], rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for (&p, &t) in pred.iter().zip(truth) {
        m.set(p, t, m.get(p, t) + 1.0);
    }
    m
}

/// Hungarian-aligned accuracy over all rows, old-class rows (`truth < k_old`)
/// and new-class rows.
///
/// A single matching over every cluster and class is used for all three numbers.
pub fn acc_partition(pred: &[usize], truth: &[usize], k_old: usize) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction vector",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyScope("accuracy"));
    }
    let k_pred = pred.iter().max().map_or(0, |m| m + 1);
    let k = k_pred.max(truth.iter().max().map_or(0, |m| m + 1));
    let table = contingency(pred, truth, k_pred, k);
    let matching = hungarian(&table, Sense::Max)?;
    let assignment = matching.row_to_col(k_pred);

    let (mut hit_old, mut hit_new, mut n_old, mut n_new) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let hit = assignment[p] == Some(t);
        if t < k_old {
            n_old += 1;
            hit_old += hit as usize;
        } else {
            n_new += 1;
            hit_new += hit as usize;
        }
    }
    let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(EvalReport {
        acc_all: frac(hit_old + hit_new, pred.len()),
        acc_old: frac(hit_old, n_old),
        acc_new: frac(hit_new, n_new),
        n_old,
        n_new,
        labeled_acc: None,
        k_hat: None,
        err: None,
        assignment,
    })
}

/// Accuracy on labeled rows after matching the `k_old` most consistent of the
/// `k` clusters to the known classes.
pub fn labeled_acc(pred: &[usize], labels: &[usize], k: usize, k_old: usize) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyScope("labeled accuracy"));
    }
    if pred.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "labeled predictions",
            expected: labels.len(),
            found: pred.len(),
        });
    }
    for (row, (&p, &y)) in pred.iter().zip(labels).enumerate() {
        if p >= k {
            return Err(Error::LabelOutOfRange { row, label: p, bound: k });
        }
        if y >= k_old {
            return Err(Error::LabelOutOfRange { row, label: y, bound: k_old });
        }
    }
    let table = contingency(pred, labels, k, k_old);
    let matching = hungarian(&table, Sense::Max)?;
    Ok(matching.total / pred.len() as f64)
}

/// `|k_hat − k| / k`.
pub fn class_count_error(k_hat: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("true class count must be >= 1"));
    }
    Ok(k_hat.abs_diff(k) as f64 / k as f64)
}
