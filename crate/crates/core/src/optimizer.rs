//! Full-batch Adam over the prototype matrix.

use alloc::vec::Vec;

use crate::classifier::PartitionModel;
use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::objective::{self, LossBreakdown, Objective, Scoring};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the weights instead of through the gradient.
    pub decoupled_wd: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            decoupled_wd: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("learning rate must be positive"));
        }
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::param("Adam betas must lie in (0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::param("Adam eps must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param("weight decay must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Matrix,
    v: Matrix,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, rows: usize, cols: usize) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &Matrix {
        &self.m
    }

    pub fn second_moment(&self) -> &Matrix {
        &self.v
    }

    /// One bias-corrected Adam update of `model` with gradient `grad`.
    pub fn step(&mut self, model: &mut PartitionModel, grad: &Matrix) -> Result<()> {
        let w = model.prototypes_mut();
        if grad.rows() != w.rows() || grad.cols() != w.cols() {
            return Err(Error::DimensionMismatch {
                what: "gradient shape",
                expected: w.rows() * w.cols(),
                found: grad.rows() * grad.cols(),
            });
        }
        if self.m.rows() != w.rows() || self.m.cols() != w.cols() {
            return Err(Error::DimensionMismatch {
                what: "optimizer state shape",
                expected: w.rows() * w.cols(),
                found: self.m.rows() * self.m.cols(),
            });
        }
        let cols = grad.cols();
        for (idx, g) in grad.as_slice().iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    step: self.step_count + 1,
                    row: idx / cols,
                    col: idx % cols,
                    value: *g,
                });
            }
        }
        let c = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        let ws = w.as_mut_slice();
        let ms = self.m.as_mut_slice();
        let vs = self.v.as_mut_slice();
        for (((wi, mi), vi), &gi) in ws.iter_mut().zip(ms.iter_mut()).zip(vs.iter_mut()).zip(grad.as_slice()) {
            let g = if c.decoupled_wd { gi } else { gi + c.weight_decay * *wi };
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            if c.decoupled_wd {
                *wi -= c.lr * c.weight_decay * *wi;
            }
            *wi -= c.lr * m_hat / (math::sqrt(v_hat) + c.eps);
        }
        Ok(())
    }
}

/// Output of [`fit`]: trained model and the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: PartitionModel,
    /// `trace[0]` is the loss at the initial prototypes, `trace[e]` the loss after `e` updates.
    pub trace: Vec<f64>,
    pub final_loss: LossBreakdown,
}

/// Runs `epochs` full-batch Adam steps on `objective` starting from `init`.
///
/// There is no randomness here: the result is a pure function of its inputs.
pub fn fit(
    fs: &FeatureSet,
    init: &Matrix,
    objective: Objective,
    scoring: Scoring,
    adam: AdamConfig,
    epochs: usize,
) -> Result<FitResult> {
    if epochs == 0 {
        return Err(Error::param("epochs must be >= 1"));
    }
    if init.cols() != fs.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial prototypes",
            expected: fs.dim(),
            found: init.cols(),
        });
    }
    let mut model = PartitionModel::new(init.clone())?;
    let mut state = AdamState::new(adam, model.k(), model.dim())?;
    let mut trace = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let (loss, grad) = objective::loss_and_grad(&model, fs, objective, scoring)?;
        trace.push(loss.total);
        state.step(&mut model, &grad)?;
    }
    let final_loss = objective::evaluate(&model, fs, objective, scoring)?;
    trace.push(final_loss.total);
    if let Some(pos) = trace.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "loss trace", row: pos });
    }
    Ok(FitResult {
        model,
        trace,
        final_loss,
    })
}
