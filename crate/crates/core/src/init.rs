//! Prototype initialization: k-means++ seeding, semi-supervised k-means (ssKM)
//! and the three initialization strategies built from them.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::{self, streams};

/// How the `K × D` prototype matrix is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum InitStrategy {
    /// Known-class centroids plus uniformly drawn unlabeled points.
    SsRdm,
    /// Known-class centroids plus k-means++ seeds drawn against them.
    SsKmpp,
    /// Centroids of semi-supervised k-means.
    #[default]
    SsKm,
}

/// Mean labeled feature of each known class, `K_old × D`.
pub fn known_class_centroids(fs: &FeatureSet) -> Result<Matrix> {
    let d = fs.dim();
    let mut sums = Matrix::zeros(fs.k_old(), d);
    let mut counts = vec![0usize; fs.k_old()];
    for &i in fs.labeled_indices() {
        let y = fs.label(i).expect("labeled row");
        counts[y] += 1;
        for (s, &x) in sums.row_mut(y).iter_mut().zip(fs.features().row(i)) {
            *s += x;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptyClass(c));
        }
        sums.row_mut(c).iter_mut().for_each(|s| *s /= n as f64);
    }
    Ok(sums)
}

/// D²-weighted k-means++ seeding of `k_new` rows from `pool`.
///
/// Distances are taken to the union of `fixed` and the seeds chosen so far. When
/// `fixed` has no rows the first seed is drawn uniformly.
pub fn kmeanspp_seed(pool: &Matrix, k_new: usize, fixed: &Matrix, seed: u64) -> Result<Matrix> {
    let mut rng = rng::seeded(seed);
    kmeanspp_with(pool, k_new, fixed, &mut rng)
}

fn kmeanspp_with(pool: &Matrix, k_new: usize, fixed: &Matrix, rng: &mut rng::Rng) -> Result<Matrix> {
    if k_new == 0 {
        return Err(Error::param("k_new must be >= 1"));
    }
    if pool.rows() == 0 {
        return Err(Error::InsufficientPoints { needed: k_new, available: 0 });
    }
    if fixed.rows() > 0 && fixed.cols() != pool.cols() {
        return Err(Error::DimensionMismatch {
            what: "fixed centroids",
            expected: pool.cols(),
            found: fixed.cols(),
        });
    }
    let mut d2 = vec![f64::INFINITY; pool.rows()];
    for c in fixed.iter_rows() {
        for (d, z) in d2.iter_mut().zip(pool.iter_rows()) {
            *d = d.min(math::sq_dist(z, c));
        }
    }
    let mut chosen = Matrix::zeros(k_new, pool.cols());
    for s in 0..k_new {
        let pick = if s == 0 && fixed.rows() == 0 {
            rng.random_range(0..pool.rows())
        } else {
            let total: f64 = d2.iter().sum();
            if total.is_nan() || total == f64::INFINITY {
                let row = d2.iter().position(|d| !d.is_finite()).unwrap_or(0);
                return Err(Error::NonFinite {
                    what: "k-means++ distances",
                    row,
                });
            }
            if !(total > 0.0) {
                return Err(Error::InsufficientPoints { needed: k_new, available: s });
            }
            WeightedIndex::new(&d2)
                .map_err(|_| Error::InsufficientPoints { needed: k_new, available: s })?
                .sample(rng)
        };
        chosen.row_mut(s).copy_from_slice(pool.row(pick));
        for (d, z) in d2.iter_mut().zip(pool.iter_rows()) {
            *d = d.min(math::sq_dist(z, chosen.row(s)));
        }
    }
    Ok(chosen)
}

/// Result of (semi-supervised) k-means.
#[derive(Debug, Clone, PartialEq)]
pub struct SskmState {
    pub centroids: Matrix,
    /// Cluster of every row; labeled rows always hold their class.
    pub assignments: Vec<usize>,
    /// `Σ_i ‖z_i − w_{a_i}‖` (unsquared) for the final state.
    pub objective: f64,
    /// Objective after the first assignment and after every later U- and W-update.
    pub trace: Vec<f64>,
    /// Completed assignment/centroid rounds.
    pub iterations: usize,
    pub converged: bool,
    /// Clusters reseeded because they emptied out.
    pub repairs: usize,
}

/// Sum of unsquared distances of every row to its assigned centroid.
pub fn sskm_objective(x: &Matrix, assignments: &[usize], centroids: &Matrix) -> f64 {
    x.iter_rows()
        .zip(assignments)
        .map(|(z, &a)| math::sqrt(math::sq_dist(z, centroids.row(a))))
        .sum()
}

fn nearest(z: &[f64], centroids: &Matrix) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, w) in centroids.iter_rows().enumerate() {
        let d = math::sq_dist(z, w);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn distance_sum(x: &Matrix, rows: &[usize], w: &[f64]) -> f64 {
    rows.iter().map(|&i| math::sqrt(math::sq_dist(x.row(i), w))).sum()
}

const WEISZFELD_ITERS: usize = 50;

/// Minimizer of the summed unsquared distance to `rows`, never worse than `current`.
///
/// Starts from the better of the cluster mean and `current`, then takes
/// Weiszfeld steps for as long as they lower the cost.
fn geometric_median(x: &Matrix, rows: &[usize], current: &[f64]) -> Vec<f64> {
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in rows {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let (mut w, mut cost) = {
        let cm = distance_sum(x, rows, &mean);
        let cc = distance_sum(x, rows, current);
        if cm <= cc { (mean, cm) } else { (current.to_vec(), cc) }
    };
    let mut next = vec![0.0; d];
    for _ in 0..WEISZFELD_ITERS {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut norm = 0.0;
        for &i in rows {
            let z = x.row(i);
            let dist = math::sqrt(math::sq_dist(z, &w));
            if dist <= 1e-12 {
                continue;
            }
            norm += 1.0 / dist;
            for (t, &v) in next.iter_mut().zip(z) {
                *t += v / dist;
            }
        }
        if norm == 0.0 {
            break;
        }
        next.iter_mut().for_each(|t| *t /= norm);
        let c = distance_sum(x, rows, &next);
        if !(c < cost) {
            break;
        }
        let gain = cost - c;
        w.copy_from_slice(&next);
        cost = c;
        if gain <= 1e-12 * cost {
            break;
        }
    }
    w
}

/// Lloyd iterations where `pinned` rows keep their cluster.
fn lloyd(x: &Matrix, pinned: &[Option<usize>], mut centroids: Matrix, max_iters: usize) -> SskmState {
    let k = centroids.rows();
    let mut assignments: Vec<usize> = pinned.iter().map(|p| p.unwrap_or(usize::MAX)).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut repairs = 0;
    for iter in 0..max_iters {
        // U-update
        let mut changed = 0usize;
        for (i, z) in x.iter_rows().enumerate() {
            if pinned[i].is_some() {
                continue;
            }
            let c = nearest(z, &centroids);
            if c != assignments[i] {
                assignments[i] = c;
                changed += 1;
            }
        }
        trace.push(sskm_objective(x, &assignments, &centroids));
        if changed == 0 && iter > 0 {
            converged = true;
            break;
        }

        // W-update
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &a) in assignments.iter().enumerate() {
            members[a].push(i);
        }
        for (c, rows) in members.iter().enumerate() {
            if !rows.is_empty() {
                let w = geometric_median(x, rows, centroids.row(c));
                centroids.row_mut(c).copy_from_slice(&w);
            }
        }
        let counts: Vec<usize> = members.iter().map(Vec::len).collect();
        let mut used = vec![false; x.rows()];
        for c in (0..k).filter(|&c| counts[c] == 0) {
            // Move the empty centroid onto the free point farthest from its own centroid.
            let far = (0..x.rows())
                .filter(|&i| pinned[i].is_none() && !used[i])
                .map(|i| (i, math::sq_dist(x.row(i), centroids.row(assignments[i]))))
                .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                used[i] = true;
                let row = x.row(i).to_vec();
                centroids.row_mut(c).copy_from_slice(&row);
                repairs += 1;
            }
        }
        trace.push(sskm_objective(x, &assignments, &centroids));
        iterations += 1;
    }
    let objective = sskm_objective(x, &assignments, &centroids);
    SskmState {
        centroids,
        assignments,
        objective,
        trace,
        iterations,
        converged,
        repairs,
    }
}

fn check_k_total(fs: &FeatureSet, k_total: usize) -> Result<()> {
    if k_total < fs.k_old() + 1 {
        return Err(Error::param(alloc::format!(
            "k_total ({k_total}) must exceed k_old ({})",
            fs.k_old()
        )));
    }
    Ok(())
}

fn novel_kmeanspp(fs: &FeatureSet, known: &Matrix, k_new: usize, rng: &mut rng::Rng) -> Result<Matrix> {
    let pool = fs.features().select_rows(fs.unlabeled_indices());
    kmeanspp_with(&pool, k_new, known, rng)
}

/// Semi-supervised k-means: labeled rows stay pinned to their class.
///
/// Known-class centroids start at the labeled means; the `k_total − K_old`
/// novel centroids are k-means++ seeded from the unlabeled rows against them.
pub fn sskm_fit(fs: &FeatureSet, k_total: usize, max_iters: usize, seed: u64) -> Result<SskmState> {
    check_k_total(fs, k_total)?;
    if max_iters == 0 {
        return Err(Error::param("max_iters must be >= 1"));
    }
    let known = known_class_centroids(fs)?;
    let mut rng = rng::substream(seed, streams::INIT);
    let novel = novel_kmeanspp(fs, &known, k_total - fs.k_old(), &mut rng)?;
    let init = known.vstack(&novel)?;
    Ok(lloyd(fs.features(), fs.labels(), init, max_iters))
}

/// Plain unsupervised k-means with k-means++ seeding over every row.
pub fn kmeans_fit(x: &Matrix, k: usize, max_iters: usize, seed: u64) -> Result<SskmState> {
    if k == 0 || max_iters == 0 {
        return Err(Error::param("k and max_iters must be >= 1"));
    }
    let mut rng = rng::substream(seed, streams::KMEANS);
    let init = kmeanspp_with(x, k, &Matrix::zeros(0, x.cols()), &mut rng)?;
    let pinned = vec![None; x.rows()];
    Ok(lloyd(x, &pinned, init, max_iters))
}

/// `K × D` initial prototypes; the first `K_old` rows belong to the known classes.
pub fn init_prototypes(
    fs: &FeatureSet,
    k_total: usize,
    strategy: InitStrategy,
    sskm_max_iters: usize,
    seed: u64,
) -> Result<Matrix> {
    check_k_total(fs, k_total)?;
    let k_new = k_total - fs.k_old();
    match strategy {
        InitStrategy::SsRdm => {
            let known = known_class_centroids(fs)?;
            let pool = fs.unlabeled_indices();
            if pool.len() < k_new {
                return Err(Error::InsufficientPoints {
                    needed: k_new,
                    available: pool.len(),
                });
            }
            let mut rng = rng::substream(seed, streams::INIT);
            let mut picks = rand::seq::index::sample(&mut rng, pool.len(), k_new).into_vec();
            picks.sort_unstable();
            let rows: Vec<usize> = picks.into_iter().map(|j| pool[j]).collect();
            known.vstack(&fs.features().select_rows(&rows))
        }
        InitStrategy::SsKmpp => {
            let known = known_class_centroids(fs)?;
            let mut rng = rng::substream(seed, streams::INIT);
            let novel = novel_kmeanspp(fs, &known, k_new, &mut rng)?;
            known.vstack(&novel)
        }
        InitStrategy::SsKm => Ok(sskm_fit(fs, k_total, sskm_max_iters, seed)?.centroids),
    }
}
