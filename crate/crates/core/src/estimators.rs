//! Classical, IPW, AIPW and normalized (Hájek) AIPW U-statistics.
//!
//! All weighted sums run over labeled tuples only: a tuple contributes to the
//! inverse-probability term only when every member is labeled, so iterating
//! the `n_lab`-point labeled subset is identical to weighting all `C(n, r)`
//! tuples by `xi_1 ... xi_r`. Sums are accumulated sequentially with
//! compensated summation, so results are bitwise reproducible.

use serde::{Deserialize, Serialize};

use crate::data::Features;
use crate::error::{Error, Result};
use crate::kernels::{binomial, tuple_sum, KernelSpec, LabelValue, MAX_DEGREE};

/// Sampling probabilities, common-random-number uniforms, labeling decisions
/// and the labels acquired under them.
///
/// `labeled[i]` is always `uniforms[i] <= probs[i]`; labels exist exactly
/// where `labeled[i]` holds.
#[derive(Debug, Clone)]
pub struct ActiveSample {
    probs: Vec<f64>,
    uniforms: Vec<f64>,
    labeled: Vec<bool>,
    labels: Vec<Option<LabelValue>>,
    predictions: Option<Vec<LabelValue>>,
    covariates: Option<Features>,
    budget: f64,
}

fn validate_probs(probs: &[f64]) -> Result<()> {
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, &p)| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Domain(format!(
            "sampling probability {p} at unit {i} is outside (0, 1]"
        )));
    }
    Ok(())
}

impl ActiveSample {
    /// Draws labeling decisions `xi_i = 1{U_i <= pi_i}` and queries `oracle`
    /// for every selected unit.
    pub fn draw(
        probs: Vec<f64>,
        uniforms: Vec<f64>,
        budget: f64,
        mut oracle: impl FnMut(usize) -> LabelValue,
    ) -> Result<Self> {
        if probs.len() != uniforms.len() {
            return Err(Error::arg("probabilities and uniforms differ in length"));
        }
        validate_probs(&probs)?;
        if let Some(u) = uniforms.iter().find(|u| !(0.0..1.0).contains(*u)) {
            return Err(Error::Domain(format!("uniform draw {u} outside [0, 1)")));
        }
        let labeled: Vec<bool> = uniforms.iter().zip(&probs).map(|(u, p)| u <= p).collect();
        let labels = labeled.iter().enumerate().map(|(i, &l)| l.then(|| oracle(i))).collect();
        Ok(ActiveSample {
            probs,
            uniforms,
            labeled,
            labels,
            predictions: None,
            covariates: None,
            budget,
        })
    }

    /// A sample where every unit is labeled with probability one.
    pub fn fully_labeled(labels: Vec<LabelValue>) -> Self {
        let n = labels.len();
        ActiveSample {
            probs: vec![1.0; n],
            uniforms: vec![0.0; n],
            labeled: vec![true; n],
            labels: labels.into_iter().map(Some).collect(),
            predictions: None,
            covariates: None,
            budget: n as f64,
        }
    }

    pub fn with_predictions(mut self, predictions: Vec<LabelValue>) -> Result<Self> {
        if predictions.len() != self.n() {
            return Err(Error::arg(format!(
                "{} predictions for {} units",
                predictions.len(),
                self.n()
            )));
        }
        self.predictions = Some(predictions);
        Ok(self)
    }

    pub fn with_covariates(mut self, covariates: Features) -> Result<Self> {
        if covariates.n() != self.n() {
            return Err(Error::arg("covariate rows do not match the sample size"));
        }
        self.covariates = Some(covariates);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn uniforms(&self) -> &[f64] {
        &self.uniforms
    }

    pub fn labeled(&self) -> &[bool] {
        &self.labeled
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn predictions(&self) -> Option<&[LabelValue]> {
        self.predictions.as_deref()
    }

    pub fn covariates(&self) -> Option<&Features> {
        self.covariates.as_ref()
    }

    /// Realized label count `n_lab = sum xi_i`.
    pub fn n_lab(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labeled[i]).collect()
    }

    /// The label of unit `i`; an error if it was never queried.
    pub fn label(&self, i: usize) -> Result<LabelValue> {
        self.labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::arg(format!("label of unit {i} was not acquired")))
    }

    fn require_predictions(&self) -> Result<&[LabelValue]> {
        self.predictions
            .as_deref()
            .ok_or_else(|| Error::arg("estimator requires predictions for every unit"))
    }
}

/// Weighted sums over the labeled tuples of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSums {
    /// `sum over labeled tuples of h(Y tuple) / prod(pi)`.
    pub label_sum: f64,
    /// `sum over labeled tuples of h(Yhat tuple) / prod(pi)`; 0 without predictions.
    pub prediction_sum: f64,
    /// `N_hat = sum over labeled tuples of 1 / prod(pi)`.
    pub n_hat: f64,
    /// `C(n, r)`.
    pub total_tuples: f64,
}

/// Elementary symmetric polynomial `e_r(w)`: the sum over `r`-subsets of weight products.
fn elementary_symmetric(weights: &[f64], r: usize) -> f64 {
    let mut e = [1.0, 0.0, 0.0, 0.0];
    for &w in weights {
        for k in (1..=r).rev() {
            e[k] += w * e[k - 1];
        }
    }
    e[r]
}

fn check_degree(kernel: &KernelSpec) -> Result<usize> {
    let r = kernel.degree();
    if r == 0 || r > MAX_DEGREE {
        return Err(Error::arg(format!("kernel degree {r} unsupported")));
    }
    Ok(r)
}

/// Collects `(labels, predictions, inverse probabilities)` over labeled units.
fn labeled_parts(
    sample: &ActiveSample,
    kernel: &KernelSpec,
    with_predictions: bool,
) -> Result<(Vec<LabelValue>, Vec<LabelValue>, Vec<f64>)> {
    let idx = sample.labeled_indices();
    if idx.len() < kernel.degree() {
        return Err(Error::estimation(format!(
            "insufficient labels: {} labeled units for a degree-{} kernel",
            idx.len(),
            kernel.degree()
        )));
    }
    let mut ys = Vec::with_capacity(idx.len());
    let mut weights = Vec::with_capacity(idx.len());
    for &i in &idx {
        let y = sample.label(i)?;
        kernel.check_value(&y)?;
        ys.push(y);
        weights.push(1.0 / sample.probs[i]);
    }
    let preds = if with_predictions {
        let all = sample.require_predictions()?;
        idx.iter().map(|&i| all[i]).collect()
    } else {
        Vec::new()
    };
    Ok((ys, preds, weights))
}

/// Computes every labeled-tuple sum needed by the IPW-type estimators.
pub fn labeled_sums(sample: &ActiveSample, kernel: &KernelSpec) -> Result<LabeledSums> {
    let r = check_degree(kernel)?;
    let with_predictions = sample.predictions.is_some();
    let (ys, preds, weights) = labeled_parts(sample, kernel, with_predictions)?;
    let label_sum = tuple_sum(kernel, &ys, Some(&weights));
    let prediction_sum = if with_predictions {
        tuple_sum(kernel, &preds, Some(&weights))
    } else {
        0.0
    };
    Ok(LabeledSums {
        label_sum,
        prediction_sum,
        n_hat: elementary_symmetric(&weights, r),
        total_tuples: binomial(sample.n(), r),
    })
}

/// Classical U-statistic: the average of `h` over all `r`-subsets.
pub fn u_statistic(values: &[LabelValue], kernel: &KernelSpec) -> Result<f64> {
    let r = check_degree(kernel)?;
    if values.len() < r {
        return Err(Error::arg(format!(
            "U-statistic of degree {r} needs at least {r} values, got {}",
            values.len()
        )));
    }
    for v in values {
        kernel.check_value(v)?;
    }
    Ok(tuple_sum(kernel, values, None) / binomial(values.len(), r))
}

/// Plug-in U-statistic over the predictions of every unit.
pub fn plug_in_u(sample: &ActiveSample, kernel: &KernelSpec) -> Result<f64> {
    u_statistic(sample.require_predictions()?, kernel)
}

/// IPW U-statistic: labeled tuples weighted by `1 / prod(pi)`, divided by `C(n, r)`.
pub fn ipw_u(sample: &ActiveSample, kernel: &KernelSpec) -> Result<f64> {
    let r = check_degree(kernel)?;
    let (ys, _, weights) = labeled_parts(sample, kernel, false)?;
    Ok(tuple_sum(kernel, &ys, Some(&weights)) / binomial(sample.n(), r))
}

/// IPW U-statistic with the random normalizer `N_hat` in place of `C(n, r)`.
/// This is the `classical` benchmark under uniform sampling.
pub fn hajek_ipw_u(sample: &ActiveSample, kernel: &KernelSpec) -> Result<f64> {
    let r = check_degree(kernel)?;
    let (ys, _, weights) = labeled_parts(sample, kernel, false)?;
    let n_hat = elementary_symmetric(&weights, r);
    Ok(tuple_sum(kernel, &ys, Some(&weights)) / n_hat)
}

/// `N_hat = sum over labeled r-tuples of 1 / prod(pi)`; unbiased for `C(n, r)`.
pub fn n_hat(sample: &ActiveSample, r: usize) -> Result<f64> {
    if r == 0 || r > MAX_DEGREE {
        return Err(Error::arg(format!("degree {r} unsupported")));
    }
    let weights: Vec<f64> = sample
        .labeled_indices()
        .into_iter()
        .map(|i| 1.0 / sample.probs[i])
        .collect();
    Ok(elementary_symmetric(&weights, r))
}

/// AIPW U-statistic: plug-in term on predictions plus the IPW correction
/// `sum (h(Y) - h(Yhat)) / prod(pi)` over labeled tuples, both over `C(n, r)`.
pub fn aipw_u(sample: &ActiveSample, kernel: &KernelSpec) -> Result<f64> {
    let plug_in = plug_in_u(sample, kernel)?;
    aipw_from_parts(plug_in, &labeled_sums(sample, kernel)?, false)
}

/// Normalized AIPW U-statistic: the correction is divided by `N_hat` instead of `C(n, r)`.
pub fn normalized_aipw_u(sample: &ActiveSample, kernel: &KernelSpec) -> Result<f64> {
    let plug_in = plug_in_u(sample, kernel)?;
    aipw_from_parts(plug_in, &labeled_sums(sample, kernel)?, true)
}

/// Assembles an AIPW estimate from a precomputed plug-in term, so the
/// `O(n log n)`-or-worse plug-in can be reused across labeling redraws.
pub fn aipw_from_parts(plug_in: f64, sums: &LabeledSums, normalized: bool) -> Result<f64> {
    let correction = sums.label_sum - sums.prediction_sum;
    let denom = if normalized { sums.n_hat } else { sums.total_tuples };
    if !(denom > 0.0) {
        return Err(Error::estimation("no labeled tuple: N_hat is zero"));
    }
    Ok(plug_in + correction / denom)
}

/// Which estimator produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Classical,
    Ipw,
    Aipw,
    AipwNormalized,
}

/// Point estimate with its variance estimate and confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub sigma2_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_lab: usize,
    pub estimator_kind: EstimatorKind,
    pub policy_kind: String,
}
