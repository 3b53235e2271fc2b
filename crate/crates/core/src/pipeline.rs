//! End-to-end estimation on one labeled-on-demand dataset.
//!
//! A uniform pilot of `ceil(pilot_frac * n_b)` units is labeled first and
//! deducted from the budget. It trains the prediction model (when the data
//! carry no `yhat`), the sampling score and the projection estimates used by
//! the variance estimator. The remaining budget is spent under the chosen
//! policy over all `n` units.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{label_value, label_values, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{aipw_u, hajek_ipw_u, normalized_aipw_u, ActiveSample, EstimateReport, EstimatorKind};
use crate::harness::{derive_seed, streams};
use crate::hoeffding::{estimate_h1, ProjectionKind};
use crate::inference::{confidence_interval, variance_estimate, Centering, VarianceBreakdown, DEFAULT_ALPHA};
use crate::kernels::builtin_kernel;
use crate::learners::LearnerSpec;
use crate::policy::{
    draw_uniforms, fit_score_model, min_pilot_size, policy_from_scores, PolicyKind, PolicySpec, PredictionSource,
    ScoreForm, ScoreTarget, DEFAULT_TAU,
};

pub const DEFAULT_PILOT_FRAC: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatePolicy {
    /// Hájek IPW under uniform sampling; predictions unused.
    Classical,
    Uniform,
    Active,
    PluginActY,
}

impl EstimatePolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(EstimatePolicy::Classical),
            "uniform" => Ok(EstimatePolicy::Uniform),
            "active" => Ok(EstimatePolicy::Active),
            "plugin-act-y" => Ok(EstimatePolicy::PluginActY),
            _ => Err(Error::arg(format!("unknown policy '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatePolicy::Classical => "classical",
            EstimatePolicy::Uniform => "uniform",
            EstimatePolicy::Active => "active",
            EstimatePolicy::PluginActY => "plugin-act-y",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub kernel: String,
    pub budget: f64,
    pub policy: EstimatePolicy,
    pub tau: f64,
    pub alpha: f64,
    pub seed: u64,
    pub pilot_frac: f64,
    /// Divide the correction by `N_hat` (ignored by `classical`).
    pub normalized: bool,
    pub mu_learner: LearnerSpec,
    pub score_learner: LearnerSpec,
    pub score_form: ScoreForm,
}

impl EstimateConfig {
    pub fn new(kernel: &str, budget: f64, policy: EstimatePolicy, seed: u64) -> Self {
        EstimateConfig {
            kernel: kernel.to_string(),
            budget,
            policy,
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            seed,
            pilot_frac: DEFAULT_PILOT_FRAC,
            normalized: true,
            mu_learner: LearnerSpec::default(),
            score_learner: LearnerSpec::default(),
            score_form: ScoreForm::Absolute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub report: EstimateReport,
    pub n: usize,
    pub pilot_size: usize,
    /// Budget left for the policy after the pilot.
    pub policy_budget: f64,
    pub expected_labels: f64,
    pub min_prob: f64,
    pub max_prob: f64,
    pub variance: VarianceBreakdown,
}

/// Runs pilot, policy, labeling, estimation and inference on `data`.
/// `data.y` plays the labeling oracle and is read only where a label is queried.
pub fn estimate_dataset(data: &Dataset, cfg: &EstimateConfig) -> Result<EstimateOutput> {
    let kernel = builtin_kernel(&cfg.kernel)?;
    let (n, r) = (data.n(), kernel.degree());
    let y = data.labels()?;
    if !(cfg.budget > 0.0 && cfg.budget <= n as f64) {
        return Err(Error::arg(format!("budget must lie in (0, {n}], got {}", cfg.budget)));
    }
    if !(cfg.pilot_frac > 0.0 && cfg.pilot_frac < 1.0) {
        return Err(Error::arg(format!(
            "pilot fraction must lie in (0, 1), got {}",
            cfg.pilot_frac
        )));
    }
    let m = ((cfg.pilot_frac * cfg.budget).ceil() as usize).max(min_pilot_size(r));
    let policy_budget = cfg.budget - m as f64;
    if m > n || policy_budget <= 0.0 {
        return Err(Error::arg(format!(
            "a pilot of {m} labels leaves no budget out of {}",
            cfg.budget
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::PILOT, 0));
    let mut pilot_idx = sample_indices(&mut rng, n, m).into_vec();
    pilot_idx.sort_unstable();
    let pilot = data.select(&pilot_idx);
    let fit_seed = derive_seed(cfg.seed, streams::FIT, 0);
    let shape = kernel.label_shape();

    let mu = if data.yhat.is_some() {
        PredictionSource::Given
    } else {
        PredictionSource::Train(cfg.mu_learner)
    };
    let (probs, h1, h1_mu, preds) = match cfg.policy {
        EstimatePolicy::Classical => {
            let truth = label_values(shape, pilot.labels()?, &pilot.x);
            let h1 = estimate_h1(&truth, &kernel, ProjectionKind::TrueLabel, fit_seed)?;
            (PolicySpec::uniform(n, policy_budget)?.probs, h1, None, None)
        }
        policy => {
            let target = match policy {
                EstimatePolicy::PluginActY => ScoreTarget::Residual,
                _ => ScoreTarget::Projection,
            };
            let fit = fit_score_model(&pilot, mu, &kernel, cfg.score_learner, fit_seed, target, cfg.score_form)?;
            let yhat = match (&data.yhat, &fit.prediction_model) {
                (Some(yh), _) => yh.clone(),
                (None, Some(model)) => model.predict_all(&data.x),
                (None, None) => unreachable!("a prediction model is trained when none is given"),
            };
            let probs = match policy {
                EstimatePolicy::Uniform => PolicySpec::uniform(n, policy_budget)?.probs,
                EstimatePolicy::Active => {
                    policy_from_scores(&fit.scores(&data.x), policy_budget, cfg.tau, PolicyKind::Active)?.probs
                }
                _ => policy_from_scores(&fit.scores(&data.x), policy_budget, cfg.tau, PolicyKind::Residual)?.probs,
            };
            (
                probs,
                fit.h1,
                Some(fit.h1_mu),
                Some(label_values(shape, &yhat, &data.x)),
            )
        }
    };

    let uniforms = draw_uniforms(n, derive_seed(cfg.seed, streams::UNIFORMS, 0));
    let mut sample = ActiveSample::draw(probs.clone(), uniforms, policy_budget, |i| {
        label_value(shape, y[i], data.x.row(i))
    })?;
    if let Some(p) = &preds {
        sample = sample.with_predictions(p.clone())?;
    }
    let (estimate, kind, centering) = match (cfg.policy, cfg.normalized) {
        (EstimatePolicy::Classical, _) => (
            hajek_ipw_u(&sample, &kernel)?,
            EstimatorKind::Classical,
            Centering::Hajek,
        ),
        (_, true) => (
            normalized_aipw_u(&sample, &kernel)?,
            EstimatorKind::AipwNormalized,
            Centering::Hajek,
        ),
        (_, false) => (aipw_u(&sample, &kernel)?, EstimatorKind::Aipw, Centering::None),
    };

    let labeled = sample.labeled();
    let h1_values: Vec<f64> = (0..n)
        .map(|i| {
            if labeled[i] {
                h1.eval(sample.label(i).expect("labeled unit"))
            } else {
                0.0
            }
        })
        .collect();
    let h1_mu_values = match (&h1_mu, &preds) {
        (Some(ev), Some(p)) => ev.eval_many(p),
        _ => vec![0.0; n],
    };
    let variance = variance_estimate(&sample, &h1_values, &h1_mu_values, r, centering)?;
    let (ci_low, ci_high) = confidence_interval(estimate, variance.sigma2, n, cfg.alpha)?;

    Ok(EstimateOutput {
        report: EstimateReport {
            estimate,
            sigma2_hat: variance.sigma2,
            ci_low,
            ci_high,
            n_lab: sample.n_lab(),
            estimator_kind: kind,
            policy_kind: cfg.policy.name().to_string(),
        },
        n,
        pilot_size: m,
        policy_budget,
        expected_labels: probs.iter().sum(),
        min_prob: probs.iter().copied().fold(f64::INFINITY, f64::min),
        max_prob: probs.iter().copied().fold(0.0, f64::max),
        variance,
    })
}
