//! Bi-level driver: λ selection by labeled accuracy, the final constrained fit
//! and class-count estimation.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::classifier::{forward_softmax, PartitionModel, ScoreKind};
use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::init::{self, InitStrategy};
use crate::matrix::Matrix;
use crate::objective::{AblationFlags, LossBreakdown, Objective, Scoring};
use crate::optimizer::{self, AdamConfig};

/// `n` uniformly spaced values from `lo` to `hi`, both inclusive.
pub fn lambda_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![hi],
        _ => (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// The default 19-point grid over `[0.05, 1]`.
pub fn default_lambda_grid() -> Vec<f64> {
    lambda_grid(19, 0.05, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PimConfig {
    pub lambda_grid: Vec<f64>,
    pub epochs_partition: usize,
    pub epochs_ksearch: usize,
    pub init_strategy: InitStrategy,
    pub sskm_max_iters: usize,
    pub flags: AblationFlags,
    /// Upper end of the class-count search; `None` means `4 · K_old`.
    pub k_max: Option<usize>,
    pub adam: AdamConfig,
    pub score: ScoreKind,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for PimConfig {
    fn default() -> Self {
        PimConfig {
            lambda_grid: default_lambda_grid(),
            epochs_partition: 1000,
            epochs_ksearch: 500,
            init_strategy: InitStrategy::SsKm,
            sskm_max_iters: 100,
            flags: AblationFlags::default(),
            k_max: None,
            adam: AdamConfig::default(),
            score: ScoreKind::Dot,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl PimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::param("lambda grid is empty"));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
            return Err(Error::param("lambda grid values must lie in (0, 1]"));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("lambda grid must be strictly increasing"));
        }
        if self.epochs_partition == 0 || self.epochs_ksearch == 0 {
            return Err(Error::param("epoch counts must be >= 1"));
        }
        if self.sskm_max_iters == 0 {
            return Err(Error::param("sskm_max_iters must be >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param("temperature must be positive"));
        }
        self.adam.validate()
    }

    pub fn scoring(&self) -> Scoring {
        Scoring {
            kind: self.score,
            temperature: self.temperature,
        }
    }

    pub fn k_max_for(&self, k_old: usize) -> usize {
        self.k_max.unwrap_or(4 * k_old)
    }

    fn init(&self, fs: &FeatureSet, k: usize) -> Result<Matrix> {
        init::init_prototypes(fs, k, self.init_strategy, self.sskm_max_iters, self.seed)
    }
}

fn check_k(fs: &FeatureSet, k: usize) -> Result<()> {
    if k < fs.k_old() + 1 || k < 2 {
        return Err(Error::param(alloc::format!(
            "cluster count {k} must exceed k_old ({})",
            fs.k_old()
        )));
    }
    Ok(())
}

/// Outcome of fitting the parametric objective at one λ.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LambdaTrial {
    pub lambda: f64,
    pub labeled_acc: f64,
    /// Final value of the minimized `−G`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LambdaSearchResult {
    pub per_lambda: Vec<LambdaTrial>,
    pub lambda_opt: f64,
}

/// Evaluates λ trials, possibly in parallel. Results must come back in input order.
pub trait TrialRunner {
    fn run(&self, lambdas: &[f64], trial: &(dyn Fn(f64) -> Result<LambdaTrial> + Sync)) -> Vec<Result<LambdaTrial>>;
}

/// Runs trials one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl TrialRunner for Sequential {
    fn run(&self, lambdas: &[f64], trial: &(dyn Fn(f64) -> Result<LambdaTrial> + Sync)) -> Vec<Result<LambdaTrial>> {
        lambdas.iter().map(|&l| trial(l)).collect()
    }
}

fn labeled_accuracy(fs: &FeatureSet, model: &PartitionModel, config: &PimConfig) -> Result<(Vec<usize>, f64)> {
    let probs = forward_softmax(model, fs.features(), config.score, config.temperature)?;
    let hard = probs.hard_labels();
    let pred_l: Vec<usize> = fs.labeled_indices().iter().map(|&i| hard[i]).collect();
    let acc = eval::labeled_acc(&pred_l, &fs.labeled_labels(), model.k(), fs.k_old())?;
    Ok((hard, acc))
}

/// Fits `−G(·, λ)` from `init` and scores the hard labels on `Z_L`.
pub fn lambda_trial(fs: &FeatureSet, init: &Matrix, lambda: f64, config: &PimConfig) -> Result<LambdaTrial> {
    let fit = optimizer::fit(
        fs,
        init,
        Objective::Parametric { lambda },
        config.scoring(),
        config.adam,
        config.epochs_partition,
    )?;
    let (_, acc) = labeled_accuracy(fs, &fit.model, config)?;
    Ok(LambdaTrial {
        lambda,
        labeled_acc: acc,
        objective: fit.final_loss.total,
    })
}

/// Picks the λ with the highest labeled accuracy; ties go to the smallest λ.
pub fn select_lambda(per_lambda: Vec<LambdaTrial>) -> Result<LambdaSearchResult> {
    let mut best: Option<LambdaTrial> = None;
    for t in &per_lambda {
        best = match best {
            Some(b) if b.labeled_acc > t.labeled_acc => Some(b),
            Some(b) if b.labeled_acc == t.labeled_acc && b.lambda <= t.lambda => Some(b),
            _ => Some(*t),
        };
    }
    let lambda_opt = best.ok_or_else(|| Error::param("lambda grid is empty"))?.lambda;
    Ok(LambdaSearchResult { per_lambda, lambda_opt })
}

/// Grid search over λ, every trial starting from the same `init`.
pub fn lambda_search_from(
    fs: &FeatureSet,
    init: &Matrix,
    config: &PimConfig,
    runner: &dyn TrialRunner,
) -> Result<LambdaSearchResult> {
    config.validate()?;
    let trial = |l: f64| lambda_trial(fs, init, l, config);
    let per_lambda = runner
        .run(&config.lambda_grid, &trial)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    select_lambda(per_lambda)
}

pub fn lambda_search(fs: &FeatureSet, k: usize, config: &PimConfig) -> Result<LambdaSearchResult> {
    check_k(fs, k)?;
    config.validate()?;
    let init = config.init(fs, k)?;
    lambda_search_from(fs, &init, config, &Sequential)
}

/// Everything produced by [`partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub search: LambdaSearchResult,
    pub init: Matrix,
    pub model: PartitionModel,
    /// Hard cluster of every row.
    pub labels: Vec<usize>,
    pub trace: Vec<f64>,
    pub final_loss: LossBreakdown,
    pub labeled_acc: f64,
    /// Present when ground truth was supplied.
    pub report: Option<EvalReport>,
}

/// λ search followed by the constrained fit at `λ_opt` from the same initialization.
///
/// With `truth` (one class per row) the report scores the unlabeled rows.
pub fn partition(
    fs: &FeatureSet,
    k: usize,
    config: &PimConfig,
    truth: Option<&[usize]>,
    runner: &dyn TrialRunner,
) -> Result<Partition> {
    check_k(fs, k)?;
    config.validate()?;
    if let Some(t) = truth {
        if t.len() != fs.len() {
            return Err(Error::DimensionMismatch {
                what: "ground truth",
                expected: fs.len(),
                found: t.len(),
            });
        }
    }
    let init = config.init(fs, k)?;
    let search = lambda_search_from(fs, &init, config, runner)?;
    let fit = optimizer::fit(
        fs,
        &init,
        Objective::Constrained {
            lambda: search.lambda_opt,
            flags: config.flags,
        },
        config.scoring(),
        config.adam,
        config.epochs_partition,
    )?;
    let (labels, labeled_acc) = labeled_accuracy(fs, &fit.model, config)?;
    let report = match truth {
        Some(t) => {
            let rows = fs.unlabeled_indices();
            let pred: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let tr: Vec<usize> = rows.iter().map(|&i| t[i]).collect();
            let mut r = eval::acc_partition(&pred, &tr, fs.k_old())?;
            r.labeled_acc = Some(labeled_acc);
            Some(r)
        }
        None => None,
    };
    Ok(Partition {
        search,
        init,
        model: fit.model,
        labels,
        trace: fit.trace,
        final_loss: fit.final_loss,
        labeled_acc,
        report,
    })
}

/// One evaluated candidate class count.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KProbe {
    pub k: usize,
    pub labeled_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KEstimate {
    pub k_hat: usize,
    /// Probes in evaluation order; every `k` appears once.
    pub trace: Vec<KProbe>,
    pub fits: usize,
}

/// Labeled accuracy as a function of the cluster count, fitted at most once per `K`.
pub struct KScorer<'a> {
    fs: &'a FeatureSet,
    config: &'a PimConfig,
    cache: BTreeMap<usize, f64>,
    trace: Vec<KProbe>,
    fits: usize,
}

impl<'a> KScorer<'a> {
    pub fn new(fs: &'a FeatureSet, config: &'a PimConfig) -> Self {
        KScorer {
            fs,
            config,
            cache: BTreeMap::new(),
            trace: Vec::new(),
            fits: 0,
        }
    }

    /// `a(K)`: labeled accuracy after fitting the unsupervised objective at λ = 1.
    pub fn score(&mut self, k: usize) -> Result<f64> {
        if let Some(&a) = self.cache.get(&k) {
            return Ok(a);
        }
        check_k(self.fs, k)?;
        let init = self.config.init(self.fs, k)?;
        let fit = optimizer::fit(
            self.fs,
            &init,
            Objective::Parametric { lambda: 1.0 },
            self.config.scoring(),
            self.config.adam,
            self.config.epochs_ksearch,
        )?;
        self.fits += 1;
        let (_, acc) = labeled_accuracy(self.fs, &fit.model, self.config)?;
        self.cache.insert(k, acc);
        self.trace.push(KProbe { k, labeled_acc: acc });
        Ok(acc)
    }

    pub fn fits(&self) -> usize {
        self.fits
    }

    pub fn trace(&self) -> &[KProbe] {
        &self.trace
    }

    /// Best probed `K`: highest accuracy, ties to the smallest `K`.
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (&k, &a) in &self.cache {
            if best.is_none_or(|(_, ba)| a > ba) {
                best = Some((k, a));
            }
        }
        best.map(|(k, _)| k)
    }
}

/// Bounded Brent maximization of `f` over the integers in `[lo, hi]`.
///
/// Probes are rounded to integers; the returned value is the best probed point
/// as judged by `best`. Golden-section steps with parabolic acceleration.
fn brent_integer_max(
    lo: usize,
    hi: usize,
    mut f: impl FnMut(usize) -> Result<f64>,
) -> Result<()> {
    let (mut a, mut b) = (lo as f64, hi as f64);
    let round = |x: f64| -> usize { (libm::round(x) as usize).clamp(lo, hi) };
    let mut g = |x: f64| f(round(x)).map(|v| -v);
    let golden = 0.5 * (3.0 - libm::sqrt(5.0));
    let sqrt_eps = libm::sqrt(2.2e-16);
    let xatol = 0.5;
    let mut xf = a + golden * (b - a);
    let (mut fulc, mut nfc) = (xf, xf);
    let (mut rat, mut e) = (0.0f64, 0.0f64);
    let mut fx = g(xf)?;
    let (mut ffulc, mut fnfc) = (fx, fx);
    let mut xm = 0.5 * (a + b);
    let mut tol1 = sqrt_eps * libm::fabs(xf) + xatol / 3.0;
    let mut tol2 = 2.0 * tol1;
    let mut iters = 0;
    while libm::fabs(xf - xm) > tol2 - 0.5 * (b - a) && iters < 500 {
        iters += 1;
        let mut use_golden = true;
        if libm::fabs(e) > tol1 {
            use_golden = false;
            let mut r = (xf - nfc) * (fx - ffulc);
            let mut q = (xf - fulc) * (fx - fnfc);
            let mut p = (xf - fulc) * q - (xf - nfc) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = libm::fabs(q);
            r = e;
            e = rat;
            if libm::fabs(p) < libm::fabs(0.5 * q * r) && p > q * (a - xf) && p < q * (b - xf) {
                rat = p / q;
                let x = xf + rat;
                if (x - a) < tol2 || (b - x) < tol2 {
                    rat = if xm - xf >= 0.0 { tol1 } else { -tol1 };
                }
            } else {
                use_golden = true;
            }
        }
        if use_golden {
            e = if xf >= xm { a - xf } else { b - xf };
            rat = golden * e;
        }
        let si = if rat >= 0.0 { 1.0 } else { -1.0 };
        let x = xf + si * libm::fabs(rat).max(tol1);
        let fu = g(x)?;
        if fu <= fx {
            if x >= xf {
                a = xf;
            } else {
                b = xf;
            }
            fulc = nfc;
            ffulc = fnfc;
            nfc = xf;
            fnfc = fx;
            xf = x;
            fx = fu;
        } else {
            if x < xf {
                a = x;
            } else {
                b = x;
            }
            if fu <= fnfc || nfc == xf {
                fulc = nfc;
                ffulc = fnfc;
                nfc = x;
                fnfc = fu;
            } else if fu <= ffulc || fulc == xf || fulc == nfc {
                fulc = x;
                ffulc = fu;
            }
        }
        xm = 0.5 * (a + b);
        tol1 = sqrt_eps * libm::fabs(xf) + xatol / 3.0;
        tol2 = 2.0 * tol1;
    }
    Ok(())
}

/// Domains with at most this many candidates are scanned exhaustively.
pub const EXHAUSTIVE_K_LIMIT: usize = 12;

/// Estimates the class count by maximizing labeled accuracy over
/// `K_old < K < k_max`.
///
/// Labeled accuracy is flat wherever extra clusters only split novel classes,
/// so ties are resolved toward the smallest `K`: after the bracketing search the
/// incumbent is moved left for as long as the accuracy does not drop.
pub fn estimate_k(fs: &FeatureSet, config: &PimConfig) -> Result<KEstimate> {
    config.validate()?;
    let k_max = config.k_max_for(fs.k_old());
    if k_max <= fs.k_old() + 1 {
        return Err(Error::param(alloc::format!(
            "k_max ({k_max}) must exceed k_old + 1 ({})",
            fs.k_old() + 1
        )));
    }
    let lo = (fs.k_old() + 1).max(2);
    let hi = k_max - 1;
    if lo > hi {
        return Err(Error::param("class-count search domain is empty"));
    }
    let mut scorer = KScorer::new(fs, config);
    if hi - lo < EXHAUSTIVE_K_LIMIT {
        for k in lo..=hi {
            scorer.score(k)?;
        }
    } else {
        brent_integer_max(lo, hi, |k| scorer.score(k))?;
        // Walk to the left end of the incumbent's plateau of maximal accuracy.
        let mut best = scorer.best().expect("at least one probe");
        let top = scorer.score(best)?;
        while best > lo && scorer.score(best - 1)? >= top {
            best -= 1;
        }
    }
    let k_hat = scorer.best().expect("at least one probe");
    Ok(KEstimate {
        k_hat,
        trace: scorer.trace().to_vec(),
        fits: scorer.fits(),
    })
}
