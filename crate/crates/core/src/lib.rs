//! Clustering partially labeled data into known and novel classes.
//!
//! Given precomputed feature vectors where a subset carries labels from `K_old`
//! known classes, the crate partitions every sample into `K` clusters (known and
//! novel) by training a softmax prototype classifier on a supervision-constrained,
//! λ-weighted mutual-information objective. λ is picked by a grid search that
//! maximizes Hungarian-aligned accuracy on the labeled rows.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, reports and the CLI
//! live in the companion `pim` crate.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`dataset`] | [`FeatureSet`], synthetic benchmarks, labeled/unlabeled split |
//! | [`classifier`] | [`PartitionModel`] and the softmax forward pass |
//! | [`objective`] | marginals, entropies, the constrained objective and its gradient |
//! | [`optimizer`] | full-batch Adam training loop |
//! | [`init`] | k-means++, semi-supervised k-means, prototype initialization |
//! | [`eval`] | Hungarian matching, clustering accuracy, class-count error |
//! | [`pim`] | λ search, final partition, class-count estimation |

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod classifier;
pub mod dataset;
mod error;
pub mod eval;
pub mod init;
pub(crate) mod math;
mod matrix;
pub mod objective;
pub mod optimizer;
pub mod pim;
pub mod rng;

pub use classifier::{forward_softmax, PartitionModel, Predictions, ScoreKind};
pub use dataset::{FeatureSet, SynthSpec, Tail};
pub use error::{Error, Result};
pub use eval::{EvalReport, Sense};
pub use init::{InitStrategy, SskmState};
pub use matrix::Matrix;
pub use objective::{AblationFlags, Constraint, LossBreakdown, Marginals, MarginalScope, Objective};
pub use optimizer::{AdamConfig, AdamState, FitResult};
pub use pim::{LambdaSearchResult, LambdaTrial, PimConfig};
