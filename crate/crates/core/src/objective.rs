//! Information-maximization objectives and their analytic gradients.
//!
//! Everything here is a *minimization* target in nats:
//!
//! * constrained objective `F(W, λ) = Σ_k π_k ln π_k + CE(Z_L) + λ · H̄(Z_U)`,
//!   i.e. `−H(Y) + CE + λ H(Y|Z)`; minimizing it maximizes the
//!   supervision-constrained, λ-weighted mutual information;
//! * parametric objective `−G(W, λ) = Σ_k π_k ln π_k + λ · H̄(Z)`, the negative of
//!   the unsupervised λ-weighted mutual information over the whole dataset.
//!
//! `H̄(S)` is the mean prediction entropy over rows `S` and `π` the mean
//! prediction (soft marginal). Logs are clamped at `1e-12`; the clamp is never
//! applied to probabilities entering linear terms.

use alloc::vec;
use alloc::vec::Vec;

use crate::classifier::{PartitionModel, Predictions, ScoreKind};
use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::math::{self, LOG_EPS};
use crate::matrix::Matrix;

/// Soft cluster proportions `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pi: Vec<f64>,
}

impl Marginals {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        let sum: f64 = pi.iter().sum();
        if pi.is_empty() || pi.iter().any(|p| !(0.0..=1.0).contains(p)) || libm::fabs(sum - 1.0) > 1e-9 {
            return Err(Error::param("marginals must lie on the simplex"));
        }
        Ok(Marginals { pi })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }
}

/// Which rows feed the marginal-entropy term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MarginalScope {
    /// All of `Z = Z_L ∪ Z_U`.
    #[default]
    Full,
    /// `Z_U` only.
    Unlabeled,
    Off,
}

/// Supervision on the labeled rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Constraint {
    /// Cross-entropy penalty on `Z_L`; the entropy term then covers `Z_U` only.
    #[default]
    CrossEntropy,
    /// No supervision; the entropy term covers all of `Z`.
    Off,
}

/// Loss-term switches for the constrained objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationFlags {
    pub marginal: MarginalScope,
    pub constraint: Constraint,
}

impl AblationFlags {
    /// The six loss-term ablation rows, from entropy-only to the full objective.
    pub const ABLATION_ROWS: [AblationFlags; 6] = [
        AblationFlags { marginal: MarginalScope::Off, constraint: Constraint::Off },
        AblationFlags { marginal: MarginalScope::Off, constraint: Constraint::CrossEntropy },
        AblationFlags { marginal: MarginalScope::Unlabeled, constraint: Constraint::Off },
        AblationFlags { marginal: MarginalScope::Full, constraint: Constraint::Off },
        AblationFlags { marginal: MarginalScope::Unlabeled, constraint: Constraint::CrossEntropy },
        AblationFlags { marginal: MarginalScope::Full, constraint: Constraint::CrossEntropy },
    ];
}

/// Which objective a fit minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Objective {
    /// `F(W, λ)` with ablation flags.
    Constrained { lambda: f64, flags: AblationFlags },
    /// `−G(W, λ)`, unsupervised.
    Parametric { lambda: f64 },
}

impl Objective {
    pub fn lambda(&self) -> f64 {
        match *self {
            Objective::Constrained { lambda, .. } | Objective::Parametric { lambda } => lambda,
        }
    }
}

/// Per-term values in nats. Inactive terms are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub marginal_entropy: Option<f64>,
    pub conditional_entropy: f64,
    pub cross_entropy: Option<f64>,
    pub lambda: f64,
    pub total: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(alloc::format!("lambda must lie in (0, 1], got {lambda}")))
    }
}

/// `π_k` = mean of `probs[i, k]` over the scoped rows.
pub fn soft_marginals(probs: &Predictions, scope: &[usize]) -> Result<Marginals> {
    if scope.is_empty() {
        return Err(Error::EmptyScope("soft marginals"));
    }
    let mut pi = vec![0.0; probs.k()];
    for &i in scope {
        for (acc, &p) in pi.iter_mut().zip(probs.row(i)) {
            *acc += p;
        }
    }
    let n = scope.len() as f64;
    pi.iter_mut().for_each(|x| *x /= n);
    Ok(Marginals { pi })
}

/// `H(π) = −Σ π_k ln π_k`, clamped to `[0, ln K]` against rounding.
pub fn marginal_entropy(pi: &Marginals) -> f64 {
    let h = -pi.pi.iter().map(|&p| math::xlogx(p)).sum::<f64>();
    h.clamp(0.0, math::ln(pi.k() as f64))
}

/// `KL(π ‖ U_K) = Σ π_k ln(K π_k)`, so that `H(π) = ln K − KL(π ‖ U_K)`.
pub fn kl_to_uniform(pi: &Marginals) -> f64 {
    let ln_k = math::ln(pi.k() as f64);
    pi.pi.iter().map(|&p| p * (math::clamped_ln(p) + ln_k)).sum()
}

/// Mean per-row prediction entropy over the scoped rows.
pub fn conditional_entropy(probs: &Predictions, scope: &[usize]) -> Result<f64> {
    if scope.is_empty() {
        return Err(Error::EmptyScope("conditional entropy"));
    }
    let sum: f64 = scope.iter().map(|&i| row_entropy(probs.row(i))).sum();
    Ok(sum / scope.len() as f64)
}

fn row_entropy(row: &[f64]) -> f64 {
    -row.iter().map(|&p| math::xlogx(p)).sum::<f64>()
}

/// `−(1/|S|) Σ_{i∈S} ln p_{i, y_i}` where `labels[j]` belongs to `scope[j]`.
pub fn cross_entropy_labeled(probs: &Predictions, labels: &[usize], scope: &[usize]) -> Result<f64> {
    if scope.is_empty() {
        return Err(Error::EmptyScope("cross entropy"));
    }
    if labels.len() != scope.len() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: scope.len(),
            found: labels.len(),
        });
    }
    let mut sum = 0.0;
    for (&i, &y) in scope.iter().zip(labels) {
        if y >= probs.k() {
            return Err(Error::LabelOutOfRange {
                row: i,
                label: y,
                bound: probs.k(),
            });
        }
        sum -= math::clamped_ln(probs.row(i)[y]);
    }
    Ok(sum / scope.len() as f64)
}

struct Scopes<'a> {
    marginal: Option<&'a [usize]>,
    conditional: &'a [usize],
    supervised: bool,
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn scopes<'a>(fs: &'a FeatureSet, flags: AblationFlags, all: &'a [usize]) -> Scopes<'a> {
    let marginal = match flags.marginal {
        MarginalScope::Full => Some(all),
        MarginalScope::Unlabeled => Some(fs.unlabeled_indices()),
        MarginalScope::Off => None,
    };
    let (conditional, supervised) = match flags.constraint {
        Constraint::CrossEntropy => (fs.unlabeled_indices(), true),
        Constraint::Off => (all, false),
    };
    Scopes {
        marginal,
        conditional,
        supervised,
    }
}

/// Constrained objective `F(W, λ)` evaluated on precomputed predictions.
pub fn objective_f(
    probs: &Predictions,
    fs: &FeatureSet,
    lambda: f64,
    flags: AblationFlags,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    if probs.len() != fs.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction rows",
            expected: fs.len(),
            found: probs.len(),
        });
    }
    let all = all_rows(fs.len());
    let sc = scopes(fs, flags, &all);
    let marginal_entropy = sc
        .marginal
        .map(|s| soft_marginals(probs, s).map(|m| marginal_entropy(&m)))
        .transpose()?;
    let cross_entropy = if sc.supervised {
        Some(cross_entropy_labeled(probs, &fs.labeled_labels(), fs.labeled_indices())?)
    } else {
        None
    };
    let conditional_entropy = conditional_entropy(probs, sc.conditional)?;
    let total = -marginal_entropy.unwrap_or(0.0) + cross_entropy.unwrap_or(0.0) + lambda * conditional_entropy;
    Ok(LossBreakdown {
        marginal_entropy,
        conditional_entropy,
        cross_entropy,
        lambda,
        total,
    })
}

/// Parametric objective as a minimization target: `Σ π ln π + λ H̄(Z)` over all rows.
pub fn objective_g(probs: &Predictions, lambda: f64) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let all = all_rows(probs.len());
    let h = marginal_entropy(&soft_marginals(probs, &all)?);
    let cond = conditional_entropy(probs, &all)?;
    Ok(LossBreakdown {
        marginal_entropy: Some(h),
        conditional_entropy: cond,
        cross_entropy: None,
        lambda,
        total: -h + lambda * cond,
    })
}

/// Penalty form of the constrained mutual information:
/// `Σ π ln π − (1/|Z|) Σ_i Σ_k h_ik ln p_ik`, with `h_i = y_i` on `Z_L` and
/// `h_i = p_i` on `Z_U`.
pub fn penalty_objective(probs: &Predictions, fs: &FeatureSet) -> Result<f64> {
    let all = all_rows(fs.len());
    let pi = soft_marginals(probs, &all)?;
    let mut sum = 0.0;
    for i in 0..fs.len() {
        let row = probs.row(i);
        sum += match fs.label(i) {
            Some(y) => row
                .iter()
                .enumerate()
                .map(|(k, &p)| if k == y { math::clamped_ln(p) } else { 0.0 })
                .sum::<f64>(),
            None => row.iter().map(|&p| math::xlogx(p)).sum::<f64>(),
        };
    }
    Ok(-marginal_entropy(&pi) - sum / fs.len() as f64)
}

/// Negated mutual information `−(H(Y) − H(Y|Z))` over all rows. Equals
/// [`penalty_objective`] whenever every labeled row is one-hot at its label.
pub fn mutual_information_target(probs: &Predictions) -> Result<f64> {
    let all = all_rows(probs.len());
    let h = marginal_entropy(&soft_marginals(probs, &all)?);
    let cond = conditional_entropy(probs, &all)?;
    Ok(-(h - cond))
}

/// Accumulates `∂L/∂s_i` given `∂L/∂p_i` for a softmax row.
#[inline]
fn softmax_backward(p: &[f64], dp: &[f64], ds: &mut [f64]) {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for ((d, &pk), &gk) in ds.iter_mut().zip(p).zip(dp) {
        *d += pk * (gk - inner);
    }
}

/// Scoring setup for objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scoring {
    pub kind: ScoreKind,
    pub temperature: f64,
}

impl Default for Scoring {
    fn default() -> Self {
        Scoring {
            kind: ScoreKind::Dot,
            temperature: 1.0,
        }
    }
}

/// Softmax probabilities and their clamped logs, from one pass over the scores.
struct Forward {
    p: Matrix,
    logp: Matrix,
}

fn forward(model: &PartitionModel, x: &Matrix, scoring: Scoring) -> Result<Forward> {
    if x.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            expected: model.dim(),
            found: x.cols(),
        });
    }
    if !(scoring.temperature > 0.0 && scoring.temperature.is_finite()) {
        return Err(Error::param("temperature must be positive"));
    }
    let k = model.k();
    let ln_eps = math::ln(LOG_EPS);
    let mut p = Matrix::zeros(x.rows(), k);
    let mut logp = Matrix::zeros(x.rows(), k);
    for (i, z) in x.iter_rows().enumerate() {
        let s = logp.row_mut(i);
        for (c, o) in s.iter_mut().enumerate() {
            *o = scoring.kind.score(model.prototypes().row(c), z) / scoring.temperature;
        }
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pr = p.row_mut(i);
        let mut sum = 0.0;
        for (pc, &sc) in pr.iter_mut().zip(s.iter()) {
            *pc = math::exp(sc - max);
            sum += *pc;
        }
        let log_sum = math::ln(sum);
        for pc in pr.iter_mut() {
            *pc /= sum;
        }
        for o in s.iter_mut() {
            *o = (*o - max - log_sum).max(ln_eps);
        }
    }
    Ok(Forward { p, logp })
}

struct ObjectiveSetup<'a> {
    scopes: Scopes<'a>,
    lambda: f64,
}

fn setup<'a>(fs: &'a FeatureSet, objective: Objective, all: &'a [usize]) -> Result<ObjectiveSetup<'a>> {
    let lambda = objective.lambda();
    check_lambda(lambda)?;
    let scopes = match objective {
        Objective::Constrained { flags, .. } => scopes(fs, flags, all),
        Objective::Parametric { .. } => Scopes {
            marginal: Some(all),
            conditional: all,
            supervised: false,
        },
    };
    Ok(ObjectiveSetup { scopes, lambda })
}

fn column_mean(p: &Matrix, scope: &[usize]) -> Vec<f64> {
    let mut pi = vec![0.0; p.cols()];
    for &i in scope {
        for (acc, &v) in pi.iter_mut().zip(p.row(i)) {
            *acc += v;
        }
    }
    let n = scope.len() as f64;
    pi.iter_mut().for_each(|x| *x /= n);
    pi
}

fn breakdown(fw: &Forward, fs: &FeatureSet, st: &ObjectiveSetup<'_>) -> Result<LossBreakdown> {
    let sc = &st.scopes;
    let marginal_entropy = sc.marginal.map(|scope| {
        -column_mean(&fw.p, scope).iter().map(|&q| math::xlogx(q)).sum::<f64>()
    });
    let conditional_entropy = {
        let sum: f64 = sc
            .conditional
            .iter()
            .map(|&i| -math::dot(fw.p.row(i), fw.logp.row(i)))
            .sum();
        sum / sc.conditional.len() as f64
    };
    let cross_entropy = if sc.supervised {
        let labeled = fs.labeled_indices();
        let mut sum = 0.0;
        for &i in labeled {
            let y = fs.label(i).expect("labeled row");
            if y >= fw.p.cols() {
                return Err(Error::LabelOutOfRange {
                    row: i,
                    label: y,
                    bound: fw.p.cols(),
                });
            }
            sum -= fw.logp.get(i, y);
        }
        Some(sum / labeled.len() as f64)
    } else {
        None
    };
    let total = -marginal_entropy.unwrap_or(0.0) + cross_entropy.unwrap_or(0.0) + st.lambda * conditional_entropy;
    Ok(LossBreakdown {
        marginal_entropy,
        conditional_entropy,
        cross_entropy,
        lambda: st.lambda,
        total,
    })
}

/// Objective value and `∂total/∂W`, in one forward/backward pass.
pub fn loss_and_grad(
    model: &PartitionModel,
    fs: &FeatureSet,
    objective: Objective,
    scoring: Scoring,
) -> Result<(LossBreakdown, Matrix)> {
    let fw = forward(model, fs.features(), scoring)?;
    let all = all_rows(fs.len());
    let st = setup(fs, objective, &all)?;
    let loss = breakdown(&fw, fs, &st)?;
    let sc = &st.scopes;
    let (n, k) = (fs.len(), model.k());
    let ln_eps = math::ln(LOG_EPS);
    // d(p ln p)/dp through the clamped log
    let dxlogx = |logp: f64| if logp <= ln_eps { ln_eps } else { logp + 1.0 };

    // ∂total/∂scores, N × K
    let mut ds = Matrix::zeros(n, k);
    let mut dp = vec![0.0; k];

    if let Some(scope) = sc.marginal {
        let pi = column_mean(&fw.p, scope);
        let inv = 1.0 / scope.len() as f64;
        let dpi: Vec<f64> = pi.iter().map(|&q| dxlogx(math::clamped_ln(q)) * inv).collect();
        for &i in scope {
            softmax_backward(fw.p.row(i), &dpi, ds.row_mut(i));
        }
    }

    let coef = st.lambda / sc.conditional.len() as f64;
    for &i in sc.conditional {
        for (d, &lp) in dp.iter_mut().zip(fw.logp.row(i)) {
            *d = -coef * dxlogx(lp);
        }
        softmax_backward(fw.p.row(i), &dp, ds.row_mut(i));
    }

    if sc.supervised {
        let labeled = fs.labeled_indices();
        let inv = 1.0 / labeled.len() as f64;
        for &i in labeled {
            let y = fs.label(i).expect("labeled row");
            if fw.logp.get(i, y) <= ln_eps {
                continue;
            }
            let row = fw.p.row(i);
            let out = ds.row_mut(i);
            for (c, (d, &p)) in out.iter_mut().zip(row).enumerate() {
                let target = if c == y { 1.0 } else { 0.0 };
                *d += inv * (p - target);
            }
        }
    }

    let mut grad = Matrix::zeros(k, model.dim());
    let inv_t = 1.0 / scoring.temperature;
    for i in 0..n {
        let z = fs.features().row(i);
        for c in 0..k {
            let coef = ds.get(i, c) * inv_t;
            if coef != 0.0 {
                let w = model.prototypes().row(c);
                scoring.kind.accumulate_grad(coef, w, z, grad.row_mut(c));
            }
        }
    }
    Ok((loss, grad))
}

/// `∂F/∂W` for the constrained objective.
pub fn grad_f(
    model: &PartitionModel,
    fs: &FeatureSet,
    lambda: f64,
    flags: AblationFlags,
    scoring: Scoring,
) -> Result<Matrix> {
    loss_and_grad(model, fs, Objective::Constrained { lambda, flags }, scoring).map(|(_, g)| g)
}

/// `∂(−G)/∂W` for the parametric objective.
pub fn grad_g(model: &PartitionModel, fs: &FeatureSet, lambda: f64, scoring: Scoring) -> Result<Matrix> {
    loss_and_grad(model, fs, Objective::Parametric { lambda }, scoring).map(|(_, g)| g)
}

/// Objective value for the current prototypes.
pub fn evaluate(model: &PartitionModel, fs: &FeatureSet, objective: Objective, scoring: Scoring) -> Result<LossBreakdown> {
    let fw = forward(model, fs.features(), scoring)?;
    let all = all_rows(fs.len());
    let st = setup(fs, objective, &all)?;
    breakdown(&fw, fs, &st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::forward_softmax;
    use crate::rng;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn preds(rows: &[&[f64]]) -> Predictions {
        let k = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Predictions::from_probs(Matrix::from_vec(rows.len(), k, data).unwrap()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn marginal_examples() {
        let p = preds(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(soft_marginals(&p, &[0, 1]).unwrap().as_slice(), &[0.5, 0.5]);
        let p = preds(&[&[0.6, 0.4], &[0.2, 0.8]]);
        let pi = soft_marginals(&p, &[0, 1]).unwrap();
        assert!(close(pi.as_slice()[0], 0.4, 1e-15) && close(pi.as_slice()[1], 0.6, 1e-15));
        assert!(close(marginal_entropy(&pi), 0.673012, 1e-6));
        let p = preds(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let pi = soft_marginals(&p, &[0, 1]).unwrap();
        assert_eq!(pi.as_slice(), &[1.0, 0.0]);
        assert_eq!(marginal_entropy(&pi), 0.0);
        assert!(matches!(soft_marginals(&p, &[]), Err(Error::EmptyScope(_))));
        let u = Marginals::new(vec![0.25; 4]).unwrap();
        assert!(close(marginal_entropy(&u), libm::log(4.0), 1e-15));
    }

    #[test]
    fn conditional_examples() {
        let p = preds(&[&[0.5, 0.5], &[1.0, 0.0]]);
        assert!(close(conditional_entropy(&p, &[0, 1]).unwrap(), 0.346574, 1e-6));
        let u = preds(&[&[1.0 / 3.0; 3], &[1.0 / 3.0; 3]]);
        assert!(close(conditional_entropy(&u, &[0, 1]).unwrap(), libm::log(3.0), 1e-12));
        let h = preds(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(conditional_entropy(&h, &[0, 1]).unwrap(), 0.0);
        assert!(conditional_entropy(&h, &[]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let p = preds(&[&[0.5, 0.5]]);
        assert!(close(cross_entropy_labeled(&p, &[0], &[0]).unwrap(), libm::log(2.0), 1e-15));
        let p = preds(&[&[0.9, 0.1], &[0.2, 0.8]]);
        assert!(close(cross_entropy_labeled(&p, &[0, 1], &[0, 1]).unwrap(), 0.164252, 1e-6));
        let h = preds(&[&[0.0, 1.0]]);
        assert_eq!(cross_entropy_labeled(&h, &[1], &[0]).unwrap(), 0.0);
        assert!(matches!(
            cross_entropy_labeled(&h, &[2], &[0]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    fn two_by_two_fs() -> FeatureSet {
        // rows 0, 2 labeled; K_old = 2
        FeatureSet::new(
            Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap(),
            vec![Some(0), None, Some(1), None],
            2,
        )
        .unwrap()
    }

    #[test]
    fn f_hard_balanced_split() {
        let fs = two_by_two_fs();
        let p = preds(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let b = objective_f(&p, &fs, 1.0, AblationFlags::default()).unwrap();
        assert!(close(b.total, -libm::log(2.0), 1e-12));
        assert_eq!(b.cross_entropy, Some(0.0));
        let off = AblationFlags::ABLATION_ROWS[0];
        assert_eq!(objective_f(&p, &fs, 1.0, off).unwrap().total, 0.0);
        assert!(objective_f(&p, &fs, 0.0, off).is_err());
        assert!(objective_f(&p, &fs, 1.5, off).is_err());
    }

    #[test]
    fn f_matches_penalty_form_when_all_rows_hard() {
        let fs = two_by_two_fs();
        let p = preds(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let f = objective_f(&p, &fs, 1.0, AblationFlags::default()).unwrap().total;
        assert!(close(f, penalty_objective(&p, &fs).unwrap(), 1e-12));
    }

    #[test]
    fn g_examples() {
        let u = preds(&[&[1.0 / 3.0; 3], &[1.0 / 3.0; 3], &[1.0 / 3.0; 3]]);
        assert!(close(objective_g(&u, 1.0).unwrap().total, 0.0, 1e-12));
        let h = preds(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(close(objective_g(&h, 0.3).unwrap().total, -libm::log(3.0), 1e-12));
    }

    #[test]
    fn g_is_linear_in_lambda() {
        let p = preds(&[&[0.7, 0.2, 0.1], &[0.1, 0.3, 0.6], &[0.25, 0.5, 0.25]]);
        let lo = objective_g(&p, 0.05).unwrap();
        let hi = objective_g(&p, 1.0).unwrap();
        let cond = conditional_entropy(&p, &[0, 1, 2]).unwrap();
        assert!(close(hi.total - lo.total, 0.95 * cond, 1e-12));
    }

    #[test]
    fn fused_evaluation_matches_pure_functions() {
        let fs = random_fs(11, 12, 3, 2);
        let model = random_model(12, 4, 3);
        let p = forward_softmax(&model, fs.features(), ScoreKind::Dot, 1.0).unwrap();
        for flags in AblationFlags::ABLATION_ROWS {
            let a = evaluate(&model, &fs, Objective::Constrained { lambda: 0.4, flags }, Scoring::default()).unwrap();
            let b = objective_f(&p, &fs, 0.4, flags).unwrap();
            assert!(close(a.total, b.total, 1e-12), "{flags:?}");
        }
        let a = evaluate(&model, &fs, Objective::Parametric { lambda: 0.4 }, Scoring::default()).unwrap();
        assert!(close(a.total, objective_g(&p, 0.4).unwrap().total, 1e-12));
    }

    fn random_fs(seed: u64, n: usize, d: usize, k_old: usize) -> FeatureSet {
        let mut r = rng::seeded(seed);
        let data = (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut labels: Vec<Option<usize>> = (0..n)
            .map(|_| r.random_bool(0.5).then(|| r.random_range(0..k_old)))
            .collect();
        labels[0] = Some(0);
        labels[n - 1] = None;
        FeatureSet::new(Matrix::from_vec(n, d, data).unwrap(), labels, k_old).unwrap()
    }

    fn random_model(seed: u64, k: usize, d: usize) -> PartitionModel {
        let mut r = rng::seeded(seed);
        let data = (0..k * d).map(|_| r.random_range(-1.5..1.5)).collect();
        PartitionModel::new(Matrix::from_vec(k, d, data).unwrap()).unwrap()
    }

    /// Central differences of the unfused objective path.
    fn fd_grad(model: &PartitionModel, fs: &FeatureSet, objective: Objective, scoring: Scoring) -> Matrix {
        let h = 1e-5;
        let value = |w: &Matrix| {
            let m = PartitionModel::new(w.clone()).unwrap();
            let p = forward_softmax(&m, fs.features(), scoring.kind, scoring.temperature).unwrap();
            match objective {
                Objective::Constrained { lambda, flags } => objective_f(&p, fs, lambda, flags).unwrap().total,
                Objective::Parametric { lambda } => objective_g(&p, lambda).unwrap().total,
            }
        };
        let w0 = model.prototypes().clone();
        let mut g = Matrix::zeros(w0.rows(), w0.cols());
        for r in 0..w0.rows() {
            for c in 0..w0.cols() {
                let mut plus = w0.clone();
                let mut minus = w0.clone();
                plus.set(r, c, w0.get(r, c) + h);
                minus.set(r, c, w0.get(r, c) - h);
                g.set(r, c, (value(&plus) - value(&minus)) / (2.0 * h));
            }
        }
        g
    }

    fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..12u64 {
            let k = 2 + (seed as usize % 4);
            let fs = random_fs(seed, 10 + seed as usize, 3, 2.min(k));
            let model = random_model(100 + seed, k, 3);
            for kind in [ScoreKind::Dot, ScoreKind::NegSqdist] {
                let scoring = Scoring { kind, temperature: 0.7 };
                for flags in AblationFlags::ABLATION_ROWS {
                    let obj = Objective::Constrained { lambda: 0.35, flags };
                    let (_, g) = loss_and_grad(&model, &fs, obj, scoring).unwrap();
                    let err = max_rel_err(&g, &fd_grad(&model, &fs, obj, scoring));
                    assert!(err < 1e-4, "seed {seed} {kind:?} {flags:?}: {err}");
                }
                let obj = Objective::Parametric { lambda: 0.8 };
                let g = grad_g(&model, &fs, 0.8, scoring).unwrap();
                assert!(max_rel_err(&g, &fd_grad(&model, &fs, obj, scoring)) < 1e-4);
            }
        }
    }

    fn simplex(k: core::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, k).prop_filter_map("positive mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-9).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    fn prediction_rows() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
        (2usize..6).prop_flat_map(|k| (Just(k), proptest::collection::vec(simplex(k..k + 1), 2..12)))
    }

    fn to_preds(rows: &[Vec<f64>]) -> Predictions {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        preds(&refs)
    }

    proptest! {
        #[test]
        fn kl_identity_and_bounds(pi in simplex(1..10)) {
            let m = Marginals::new(pi).unwrap();
            let h = marginal_entropy(&m);
            let ln_k = libm::log(m.k() as f64);
            prop_assert!((h - (ln_k - kl_to_uniform(&m))).abs() < 1e-12);
            prop_assert!(h >= 0.0 && h <= ln_k + 1e-15);
        }

        #[test]
        fn conditional_entropy_bounded_by_marginal((k, rows) in prediction_rows()) {
            let p = to_preds(&rows);
            let all: Vec<usize> = (0..rows.len()).collect();
            let cond = conditional_entropy(&p, &all).unwrap();
            let h = marginal_entropy(&soft_marginals(&p, &all).unwrap());
            prop_assert!(cond >= 0.0);
            prop_assert!(cond <= h + 1e-12);
            prop_assert!(h <= libm::log(k as f64) + 1e-12);
        }

        #[test]
        fn penalty_form_equals_mutual_information(
            (k, mut rows) in prediction_rows(),
            mask in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let n = rows.len();
            let mut labels = vec![None; n];
            for i in 0..n {
                if mask[i] || i == 0 {
                    let y = i % k;
                    rows[i] = (0..k).map(|c| if c == y { 1.0 } else { 0.0 }).collect();
                    labels[i] = Some(y);
                }
            }
            labels[n - 1] = None;
            let fs = FeatureSet::new(Matrix::from_vec(n, 1, vec![1.0; n]).unwrap(), labels, k).unwrap();
            let p = to_preds(&rows);
            let a = penalty_objective(&p, &fs).unwrap();
            let b = mutual_information_target(&p).unwrap();
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
