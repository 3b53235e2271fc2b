//! Active label acquisition for U-statistics.
//!
//! Given covariates for `n` units, a prediction model and a labeling budget
//! `n_b`, this crate picks which labels to query and turns the queried labels
//! plus predictions into an unbiased (or asymptotically unbiased) estimate of
//! a U-statistic target with a valid confidence interval:
//!
//! - [`kernels`]: symmetric kernels and `O(n log n)` fast paths.
//! - [`estimators`]: classical, IPW, AIPW and normalized AIPW U-statistics.
//! - [`hoeffding`]: pilot estimates of first-order projections.
//! - [`learners`]: kNN and ridge regressors behind one trait.
//! - [`policy`]: learned scores, trimming and CRN labeling decisions.
//! - [`inference`]: variance estimation and normal intervals.
//! - [`uerm`]: active pairwise-ranking U-estimation.
//! - [`pipeline`]: pilot, policy, labeling and inference on one dataset.
//! - [`harness`]: synthetic data, Monte Carlo trials, summaries and I/O.

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod hoeffding;
pub mod inference;
pub mod kernels;
pub mod learners;
pub mod numeric;
pub mod pipeline;
pub mod policy;
pub mod uerm;

pub use error::{Error, Result};

/// Version string written into JSON outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
