//! Softmax prototype classifier `f_W`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;

/// Prototype matrix `W`, one row per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionModel {
    prototypes: Matrix,
}

impl PartitionModel {
    pub fn new(prototypes: Matrix) -> Result<Self> {
        if prototypes.rows() < 2 {
            return Err(Error::param("a partition model needs at least 2 prototypes"));
        }
        if prototypes.cols() == 0 {
            return Err(Error::param("prototype dimension must be positive"));
        }
        for i in 0..prototypes.rows() {
            if prototypes.row(i).iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what: "prototypes", row: i });
            }
        }
        Ok(PartitionModel { prototypes })
    }

    pub fn k(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub(crate) fn prototypes_mut(&mut self) -> &mut Matrix {
        &mut self.prototypes
    }

    pub fn into_prototypes(self) -> Matrix {
        self.prototypes
    }
}

/// How a feature vector is scored against a prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScoreKind {
    /// `⟨w_k, z_i⟩`
    #[default]
    Dot,
    /// `−‖z_i − w_k‖²`
    NegSqdist,
}

impl ScoreKind {
    #[inline]
    pub fn score(self, w: &[f64], z: &[f64]) -> f64 {
        match self {
            ScoreKind::Dot => math::dot(w, z),
            ScoreKind::NegSqdist => -math::sq_dist(w, z),
        }
    }

    /// Adds `coef · ∂score/∂w` into `out`.
    #[inline]
    pub(crate) fn accumulate_grad(self, coef: f64, w: &[f64], z: &[f64], out: &mut [f64]) {
        match self {
            ScoreKind::Dot => {
                for (o, &zj) in out.iter_mut().zip(z) {
                    *o += coef * zj;
                }
            }
            ScoreKind::NegSqdist => {
                for ((o, &zj), &wj) in out.iter_mut().zip(z).zip(w) {
                    *o += coef * 2.0 * (zj - wj);
                }
            }
        }
    }
}

/// Row-stochastic prediction matrix, `N × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    probs: Matrix,
}

impl Predictions {
    /// Wraps a matrix whose rows already lie on the simplex (within 1e-9).
    pub fn from_probs(probs: Matrix) -> Result<Self> {
        for i in 0..probs.rows() {
            let row = probs.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || libm::fabs(sum - 1.0) > 1e-9 {
                return Err(Error::param(alloc::format!("prediction row {i} is not on the simplex")));
            }
        }
        Ok(Predictions { probs })
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.cols()
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    /// Row-wise argmax (ties to the smallest cluster index).
    pub fn hard_labels(&self) -> Vec<usize> {
        self.probs.iter_rows().map(math::argmax).collect()
    }
}

/// Softmax of `score(w_k, z_i) / temperature` over clusters, with max subtraction.
pub fn forward_softmax(
    model: &PartitionModel,
    features: &Matrix,
    score: ScoreKind,
    temperature: f64,
) -> Result<Predictions> {
    if features.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            expected: model.dim(),
            found: features.cols(),
        });
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param("temperature must be positive"));
    }
    let k = model.k();
    let mut probs = Matrix::zeros(features.rows(), k);
    for (i, z) in features.iter_rows().enumerate() {
        let out = probs.row_mut(i);
        for (c, o) in out.iter_mut().enumerate() {
            *o = score.score(model.prototypes.row(c), z) / temperature;
        }
        softmax_in_place(out);
    }
    Ok(Predictions { probs })
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in row.iter_mut() {
        *s = math::exp(*s - max);
        sum += *s;
    }
    for s in row.iter_mut() {
        *s /= sum;
    }
}
