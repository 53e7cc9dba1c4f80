//! Embedded datasets with partial labels, seeded synthetic benchmarks and the
//! labeled/unlabeled split protocol.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::{self, streams};

/// Feature matrix `Z = Z_L ∪ Z_U` with labels on the labeled rows.
///
/// Unlabeled rows carry `None`; there is no in-range sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Matrix,
    labels: Vec<Option<usize>>,
    k_old: usize,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

impl FeatureSet {
    pub fn new(features: Matrix, labels: Vec<Option<usize>>, k_old: usize) -> Result<Self> {
        if k_old == 0 {
            return Err(Error::param("k_old must be positive"));
        }
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                what: "label vector",
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if features.cols() == 0 {
            return Err(Error::param("feature dimension must be positive"));
        }
        for (i, row) in features.iter_rows().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what: "features", row: i });
            }
        }
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            match *l {
                Some(y) if y >= k_old => {
                    return Err(Error::LabelOutOfRange {
                        row: i,
                        label: y,
                        bound: k_old,
                    })
                }
                Some(_) => labeled.push(i),
                None => unlabeled.push(i),
            }
        }
        if labeled.is_empty() {
            return Err(Error::param("feature set needs at least one labeled row"));
        }
        if unlabeled.is_empty() {
            return Err(Error::param("feature set needs at least one unlabeled row"));
        }
        Ok(FeatureSet {
            features,
            labels,
            k_old,
            labeled,
            unlabeled,
        })
    }

    /// Rescales every row to unit Euclidean norm.
    pub fn l2_normalized(mut self) -> Result<Self> {
        let d = self.features.cols();
        for i in 0..self.features.rows() {
            let row = self.features.row_mut(i);
            let norm = math::sqrt(row.iter().map(|x| x * x).sum());
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::param(format!("row {i} has zero norm and cannot be normalized")));
            }
            for x in row.iter_mut().take(d) {
                *x /= norm;
            }
        }
        Ok(self)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labels[i].is_some()
    }

    pub fn k_old(&self) -> usize {
        self.k_old
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row indices of `Z_L`, ascending.
    pub fn labeled_indices(&self) -> &[usize] {
        &self.labeled
    }

    /// Row indices of `Z_U`, ascending.
    pub fn unlabeled_indices(&self) -> &[usize] {
        &self.unlabeled
    }

    /// Labels of `Z_L` in the order of [`labeled_indices`](Self::labeled_indices).
    pub fn labeled_labels(&self) -> Vec<usize> {
        self.labeled.iter().filter_map(|&i| self.labels[i]).collect()
    }
}

/// Class-prior profile for synthetic data.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Tail {
    Uniform,
    /// Class `c` (1-based) gets `base · c^(−alpha)` samples.
    Power { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthSpec {
    pub k_total: usize,
    pub k_old: usize,
    pub dim: usize,
    pub samples_per_class_base: usize,
    pub tail: Tail,
    pub separation: f64,
    pub noise_sigma: f64,
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            k_total: 6,
            k_old: 3,
            dim: 8,
            samples_per_class_base: 100,
            tail: Tail::Uniform,
            separation: 6.0,
            noise_sigma: 1.0,
            labeled_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_old == 0 || self.k_old >= self.k_total {
            return Err(Error::param("k_old < k_total required (and k_old >= 1)"));
        }
        if self.dim == 0 {
            return Err(Error::param("dim must be positive"));
        }
        if let Tail::Power { alpha } = self.tail {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::param("tail exponent must be finite and >= 0"));
            }
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::param("separation must be positive"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma must be positive"));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::param("labeled_fraction must lie in (0, 1)"));
        }
        if self.samples_per_class_base < 2 {
            return Err(Error::param("samples_per_class_base must be >= 2"));
        }
        Ok(())
    }

    /// Per-class sample counts, never below 2.
    pub fn class_counts(&self) -> Vec<usize> {
        let base = self.samples_per_class_base as f64;
        (0..self.k_total)
            .map(|c| {
                let weight = match self.tail {
                    Tail::Uniform => 1.0,
                    Tail::Power { alpha } => libm::pow((c + 1) as f64, -alpha),
                };
                round_half_up(base * weight).max(2)
            })
            .collect()
    }
}

fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Unit directions picked by greedy farthest-point sampling over random candidates.
fn farthest_point_directions(k: usize, dim: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n_candidates = 64 * k.max(1);
    let mut candidates = Vec::with_capacity(n_candidates);
    while candidates.len() < n_candidates {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-12 {
            candidates.push(v.into_iter().map(|x| x / norm).collect::<Vec<_>>());
        }
    }
    let mut chosen = vec![0usize];
    let mut min_d2: Vec<f64> = candidates.iter().map(|c| math::sq_dist(c, &candidates[0])).collect();
    while chosen.len() < k {
        let next = math::argmax(&min_d2);
        chosen.push(next);
        for (d, c) in min_d2.iter_mut().zip(&candidates) {
            *d = d.min(math::sq_dist(c, &candidates[next]));
        }
    }
    chosen.into_iter().map(|i| candidates[i].clone()).collect()
}

/// Class means on a sphere, with every pairwise distance at least `separation`.
///
/// The sphere radius is `separation` unless the unit directions are closer than
/// 1 apart, in which case it grows until the minimum pairwise distance reaches
/// `separation`. When the directions coincide (one dimension, more than two
/// classes) the means are spaced `separation` apart along the first axis.
pub fn synthetic_means(spec: &SynthSpec) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = rng::substream(spec.seed, streams::SYNTH_MEANS);
    let dirs = farthest_point_directions(spec.k_total, spec.dim, &mut rng);
    let mut min_unit = f64::INFINITY;
    for a in 0..dirs.len() {
        for b in a + 1..dirs.len() {
            min_unit = min_unit.min(math::sqrt(math::sq_dist(&dirs[a], &dirs[b])));
        }
    }
    if min_unit < 1e-6 {
        let mut m = Matrix::zeros(spec.k_total, spec.dim);
        for c in 0..spec.k_total {
            m.set(c, 0, spec.separation * c as f64);
        }
        return Ok(m);
    }
    let scale = if min_unit >= 1.0 { 1.0 } else { 1.0 / min_unit };
    let radius = spec.separation * scale;
    let rows: Vec<Vec<f64>> = dirs
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * radius).collect())
        .collect();
    Matrix::from_rows(&rows)
}

/// Draws a Gaussian-blob benchmark and applies [`gcd_split`].
///
/// Returns the raw (unnormalized) feature set together with the full
/// ground-truth labels; the feature set only exposes labels on `Z_L`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(FeatureSet, Vec<usize>)> {
    let means = synthetic_means(spec)?;
    let counts = spec.class_counts();
    let total: usize = counts.iter().sum();
    let mut rng = rng::substream(spec.seed, streams::SYNTH_SAMPLES);
    let mut data = Vec::with_capacity(total * spec.dim);
    let mut truth = Vec::with_capacity(total);
    for (c, &n) in counts.iter().enumerate() {
        let mean = means.row(c);
        for _ in 0..n {
            for &m in mean {
                let e: f64 = rng.sample(StandardNormal);
                data.push(m + spec.noise_sigma * e);
            }
            truth.push(c);
        }
    }
    let features = Matrix::from_vec(total, spec.dim, data)?;
    let fs = gcd_split(features, &truth, spec.k_old, spec.labeled_fraction, spec.seed)?;
    Ok((fs, truth))
}

/// Labels `round(fraction · n_c)` random samples of every known class `c < k_old`.
///
/// All samples of classes `>= k_old` stay unlabeled. The labeled count per class
/// is clamped to `[1, n_c − 1]` so that every known class keeps a labeled
/// prototype and an unlabeled remainder.
pub fn gcd_split(
    features: Matrix,
    ground_truth: &[usize],
    k_old: usize,
    labeled_fraction: f64,
    seed: u64,
) -> Result<FeatureSet> {
    if ground_truth.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            what: "ground truth",
            expected: features.rows(),
            found: ground_truth.len(),
        });
    }
    if !(labeled_fraction > 0.0 && labeled_fraction < 1.0) {
        return Err(Error::param("labeled_fraction must lie in (0, 1)"));
    }
    if k_old == 0 {
        return Err(Error::param("k_old must be positive"));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k_old];
    for (i, &y) in ground_truth.iter().enumerate() {
        if y < k_old {
            members[y].push(i);
        }
    }
    let mut rng = rng::substream(seed, streams::SPLIT);
    let mut labels = vec![None; features.rows()];
    for (c, rows) in members.iter_mut().enumerate() {
        if rows.len() < 2 {
            return Err(Error::param(format!(
                "known class {c} has {} samples; at least 2 are needed to split",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        let n_lab = round_half_up(labeled_fraction * rows.len() as f64).clamp(1, rows.len() - 1);
        for &i in &rows[..n_lab] {
            labels[i] = Some(c);
        }
    }
    FeatureSet::new(features, labels, k_old)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FeatureSet {
        let m = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 3.0, 4.0]]).unwrap();
        FeatureSet::new(m, vec![Some(0), None], 1).unwrap()
    }

    #[test]
    fn minimal_feature_set() {
        let fs = tiny();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs.labeled_indices(), &[0]);
        assert_eq!(fs.unlabeled_indices(), &[1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Matrix::from_rows(&[[1.0], [f64::NAN]]).unwrap();
        assert_eq!(
            FeatureSet::new(m, vec![Some(0), None], 1),
            Err(Error::NonFinite { what: "features", row: 1 })
        );
        let m = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(
            FeatureSet::new(m.clone(), vec![Some(2), None], 2),
            Err(Error::LabelOutOfRange { row: 0, .. })
        ));
        assert!(FeatureSet::new(m.clone(), vec![Some(0), Some(0)], 1).is_err());
        assert!(FeatureSet::new(m, vec![None, None], 1).is_err());
    }

    #[test]
    fn normalization_gives_unit_rows() {
        let fs = tiny().l2_normalized().unwrap();
        assert_eq!(fs.features().row(1), &[0.0, 0.6, 0.8]);
        for r in fs.features().iter_rows() {
            let n: f64 = r.iter().map(|x| x * x).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_tail_counts() {
        let spec = SynthSpec {
            k_total: 4,
            k_old: 2,
            samples_per_class_base: 50,
            ..SynthSpec::default()
        };
        assert_eq!(spec.class_counts(), vec![50, 50, 50, 50]);
        let (_, truth) = generate_synthetic(&spec).unwrap();
        for c in 0..4 {
            assert_eq!(truth.iter().filter(|&&y| y == c).count(), 50);
        }
    }

    #[test]
    fn power_tail_counts() {
        let spec = SynthSpec {
            k_total: 4,
            k_old: 2,
            samples_per_class_base: 48,
            tail: Tail::Power { alpha: 1.0 },
            ..SynthSpec::default()
        };
        // 48·c^-1 for c = 1..4
        assert_eq!(spec.class_counts(), vec![48, 24, 16, 12]);
        let steep = SynthSpec {
            tail: Tail::Power { alpha: 4.0 },
            samples_per_class_base: 10,
            ..spec
        };
        assert!(steep.class_counts().iter().all(|&n| n >= 2));
    }

    #[test]
    fn means_respect_separation() {
        for seed in 0..5 {
            let spec = SynthSpec {
                k_total: 12,
                k_old: 4,
                dim: 3,
                separation: 2.5,
                seed,
                ..SynthSpec::default()
            };
            let means = synthetic_means(&spec).unwrap();
            for a in 0..12 {
                for b in a + 1..12 {
                    let d = math::sqrt(math::sq_dist(means.row(a), means.row(b)));
                    assert!(d >= 2.5 - 1e-9, "seed {seed}: {d}");
                }
            }
        }
    }

    #[test]
    fn synthetic_is_seeded() {
        let spec = SynthSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.0.features(), c.0.features());
    }

    #[test]
    fn split_counts() {
        let truth: Vec<usize> = (0..6).flat_map(|c| core::iter::repeat_n(c, 10)).collect();
        let m = Matrix::from_vec(60, 1, (0..60).map(|i| i as f64).collect()).unwrap();
        let fs = gcd_split(m, &truth, 3, 0.5, 9).unwrap();
        assert_eq!(fs.labeled_indices().len(), 15);
        assert_eq!(fs.unlabeled_indices().len(), 45);
        for &i in fs.labeled_indices() {
            assert_eq!(fs.label(i), Some(truth[i]));
            assert!(truth[i] < 3);
        }
    }

    #[test]
    fn split_smallest_class() {
        let truth = vec![0, 0, 1, 1, 1];
        let m = Matrix::from_vec(5, 1, vec![1.0; 5]).unwrap();
        let fs = gcd_split(m.clone(), &truth, 1, 0.5, 0).unwrap();
        assert_eq!(fs.labeled_indices().len(), 1);
        assert!(gcd_split(m, &[0, 1, 1, 1, 1], 1, 0.5, 0).is_err());
    }

    #[test]
    fn cifar10_shaped_split() {
        // 10 classes of 5000, first 5 known, half labeled.
        let truth: Vec<usize> = (0..10).flat_map(|c| core::iter::repeat_n(c, 5000)).collect();
        let m = Matrix::zeros(truth.len(), 1);
        let fs = gcd_split(m, &truth, 5, 0.5, 3).unwrap();
        assert_eq!(fs.labeled_indices().len(), 12_500);
        assert_eq!(fs.unlabeled_indices().len(), 37_500);
    }
}
