//! Sampling policies: learned uncertainty scores, budget normalization,
//! trimming, and labeling decisions under common random numbers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{label_value, Dataset, Features};
use crate::error::{Error, Result};
use crate::hoeffding::{estimate_h1, ProjectionEvaluator, ProjectionKind};
use crate::kernels::KernelSpec;
use crate::learners::{LearnerSpec, RegressionModel};

pub const DEFAULT_TAU: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Active,
    Uniform,
    Residual,
    Oracle,
    Custom,
}

/// Final per-unit sampling probabilities and how they were built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub tau: f64,
    pub budget: f64,
    pub probs: Vec<f64>,
}

impl PolicySpec {
    /// `pi_i = n_b / n` for every unit.
    pub fn uniform(n: usize, budget: f64) -> Result<Self> {
        check_budget(budget, n)?;
        Ok(PolicySpec {
            kind: PolicyKind::Uniform,
            tau: 0.0,
            budget,
            probs: vec![budget / n as f64; n],
        })
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    /// Expected label count `sum pi_i`.
    pub fn expected_labels(&self) -> f64 {
        self.probs.iter().sum()
    }
}

fn check_budget(budget: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::arg("policy over zero units"));
    }
    if !(budget > 0.0 && budget <= n as f64) {
        return Err(Error::arg(format!(
            "budget must lie in (0, n] = (0, {n}], got {budget}"
        )));
    }
    Ok(())
}

/// `pi_hat_i = n_b V_i / sum_j V_j`, capped at 1 without redistribution.
///
/// Negative scores are clamped to 0. If every score is 0 the policy falls
/// back to uniform `n_b / n` with a warning.
pub fn raw_probabilities(scores: &[f64], budget: f64) -> Result<Vec<f64>> {
    let n = scores.len();
    check_budget(budget, n)?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Domain(format!("non-finite score {s}")));
    }
    let clamped: Vec<f64> = scores.iter().map(|&s| s.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        log::warn!("all sampling scores are zero; falling back to uniform sampling");
        return Ok(vec![budget / n as f64; n]);
    }
    Ok(clamped.iter().map(|&s| (budget * s / total).min(1.0)).collect())
}

/// `pi_tau = tau * raw + (1 - tau) * n_b / n`, capped at 1.
pub fn trim(raw: &[f64], tau: f64, budget: f64, kind: PolicyKind) -> Result<PolicySpec> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::arg(format!("tau must lie in [0, 1], got {tau}")));
    }
    let n = raw.len();
    check_budget(budget, n)?;
    let floor = (1.0 - tau) * budget / n as f64;
    let probs = raw.iter().map(|&p| (tau * p + floor).min(1.0)).collect();
    Ok(PolicySpec {
        kind,
        tau,
        budget,
        probs,
    })
}

/// Scores to probabilities: [`raw_probabilities`] followed by [`trim`].
pub fn policy_from_scores(scores: &[f64], budget: f64, tau: f64, kind: PolicyKind) -> Result<PolicySpec> {
    let raw = raw_probabilities(scores, budget)?;
    trim(&raw, tau, budget, kind)
}

/// One uniform in `[0, 1)` per unit from a seeded stream.
pub fn draw_uniforms(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// `xi_i = 1{U_i <= pi_i}`. Reusing `uniforms` across policies couples
/// their labeling decisions: `pi <= pi'` pointwise implies `xi <= xi'`.
pub fn sample_labels(policy: &PolicySpec, uniforms: &[f64]) -> Result<Vec<bool>> {
    if uniforms.len() != policy.n() {
        return Err(Error::arg("uniforms and policy differ in length"));
    }
    Ok(uniforms.iter().zip(&policy.probs).map(|(u, p)| u <= p).collect())
}

/// Where predictions on the pilot come from.
#[derive(Debug, Clone, Copy)]
pub enum PredictionSource {
    /// Train the prediction model on the first pilot fold.
    Train(LearnerSpec),
    /// Predictions are supplied in the pilot's `yhat`; no fold split is needed.
    Given,
}

/// Regression targets for the score model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreTarget {
    /// `|h1_hat(Y) - h1_hat_mu(Yhat)|`, the projection residual.
    Projection,
    /// `|Y - Yhat|`, the prediction residual.
    Residual,
}

/// How the score model summarizes the conditional target distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreForm {
    /// `V(x) = E[t | X = x]`: regress the targets directly.
    #[default]
    Absolute,
    /// `V(x) = sqrt(E[t^2 | X = x])`: regress squared targets, take the root.
    RootMeanSquare,
}

impl ScoreForm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "abs" | "absolute" => Ok(ScoreForm::Absolute),
            "rms" | "root-mean-square" => Ok(ScoreForm::RootMeanSquare),
            _ => Err(Error::arg(format!("unknown score form '{s}' (expected abs or rms)"))),
        }
    }
}

/// A fitted score model together with the pieces it was built from.
pub struct UncertaintyFit {
    /// The regression behind `V(x)`; see [`UncertaintyFit::scores`].
    pub score_model: Box<dyn RegressionModel>,
    pub form: ScoreForm,
    /// The prediction model, when it was trained here.
    pub prediction_model: Option<Box<dyn RegressionModel>>,
    /// Predictions on every pilot unit.
    pub pilot_predictions: Vec<f64>,
    /// Regression targets on every pilot unit.
    pub targets: Vec<f64>,
    /// `h1_hat` from true labels of the projection fold.
    pub h1: ProjectionEvaluator,
    /// `h1_hat_mu` from predictions of the projection fold.
    pub h1_mu: ProjectionEvaluator,
}

impl UncertaintyFit {
    /// Scores `V(x_i) >= 0` for every row.
    pub fn scores(&self, x: &Features) -> Vec<f64> {
        let v = self.score_model.predict_all(x).into_iter().map(|v| v.max(0.0));
        match self.form {
            ScoreForm::Absolute => v.collect(),
            ScoreForm::RootMeanSquare => v.map(f64::sqrt).collect(),
        }
    }
}

/// Minimum pilot size for a degree-`r` kernel.
pub fn min_pilot_size(r: usize) -> usize {
    2 * (r - 1) + 4
}

/// Learns the uncertainty score `V(x) ~ E[|h1(Y) - h1_mu(Yhat)| | X = x]`.
///
/// The pilot is split into two folds by a seeded permutation. The first fold
/// trains the prediction model (skipped when predictions are given); the
/// second builds `h1_hat` and `h1_hat_mu`. Targets are then computed for
/// every pilot unit and `V` is fit on the full pilot.
pub fn learn_uncertainty(
    pilot: &Dataset,
    mu: PredictionSource,
    kernel: &KernelSpec,
    learner: LearnerSpec,
    seed: u64,
) -> Result<UncertaintyFit> {
    fit_score_model(
        pilot,
        mu,
        kernel,
        learner,
        seed,
        ScoreTarget::Projection,
        ScoreForm::Absolute,
    )
}

/// Shared pipeline behind the active and residual policies.
pub fn fit_score_model(
    pilot: &Dataset,
    mu: PredictionSource,
    kernel: &KernelSpec,
    learner: LearnerSpec,
    seed: u64,
    target: ScoreTarget,
    form: ScoreForm,
) -> Result<UncertaintyFit> {
    let m = pilot.n();
    let r = kernel.degree();
    if m < min_pilot_size(r) {
        return Err(Error::arg(format!(
            "pilot of {m} points is too small for a degree-{r} kernel (need {})",
            min_pilot_size(r)
        )));
    }
    let y = pilot.labels()?;
    let shape = kernel.label_shape();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let (fold1, fold2) = order.split_at(m / 2);

    let (prediction_model, yhat, projection_fold): (_, Vec<f64>, Vec<usize>) = match mu {
        PredictionSource::Train(spec) => {
            let mut model = spec.build();
            let train = pilot.select(fold1);
            model.fit(&train.x, train.labels()?)?;
            let yhat = model.predict_all(&pilot.x);
            (Some(model), yhat, fold2.to_vec())
        }
        PredictionSource::Given => {
            let yhat = pilot
                .yhat
                .clone()
                .ok_or_else(|| Error::arg("pilot predictions required"))?;
            (None, yhat, (0..m).collect())
        }
    };

    let truth: Vec<_> = projection_fold
        .iter()
        .map(|&i| label_value(shape, y[i], pilot.x.row(i)))
        .collect();
    let preds: Vec<_> = projection_fold
        .iter()
        .map(|&i| label_value(shape, yhat[i], pilot.x.row(i)))
        .collect();
    let h1 = estimate_h1(&truth, kernel, ProjectionKind::TrueLabel, seed)?;
    let h1_mu = estimate_h1(&preds, kernel, ProjectionKind::Prediction, seed)?;

    let targets: Vec<f64> = (0..m)
        .map(|i| match target {
            ScoreTarget::Projection => {
                let row = pilot.x.row(i);
                (h1.eval(label_value(shape, y[i], row)) - h1_mu.eval(label_value(shape, yhat[i], row))).abs()
            }
            ScoreTarget::Residual => (y[i] - yhat[i]).abs(),
        })
        .collect();

    let mut score_model = learner.build();
    match form {
        ScoreForm::Absolute => score_model.fit(&pilot.x, &targets)?,
        ScoreForm::RootMeanSquare => {
            let sq: Vec<f64> = targets.iter().map(|t| t * t).collect();
            score_model.fit(&pilot.x, &sq)?
        }
    }
    Ok(UncertaintyFit {
        score_model,
        form,
        prediction_model,
        pilot_predictions: yhat,
        targets,
        h1,
        h1_mu,
    })
}

/// Active policy on `x`: learned projection-residual scores, normalized and trimmed.
pub fn active_policy(fit: &UncertaintyFit, x: &Features, budget: f64, tau: f64) -> Result<PolicySpec> {
    policy_from_scores(&fit.scores(x), budget, tau, PolicyKind::Active)
}

/// The prediction-residual baseline: same pipeline with targets `|Y - Yhat|`.
#[allow(clippy::too_many_arguments)]
pub fn residual_policy(
    pilot: &Dataset,
    mu: PredictionSource,
    kernel: &KernelSpec,
    learner: LearnerSpec,
    x: &Features,
    budget: f64,
    tau: f64,
    seed: u64,
) -> Result<PolicySpec> {
    let fit = fit_score_model(
        pilot,
        mu,
        kernel,
        learner,
        seed,
        ScoreTarget::Residual,
        ScoreForm::Absolute,
    )?;
    policy_from_scores(&fit.scores(x), budget, tau, PolicyKind::Residual)
}

/// Policy built from known optimal scores `s(X)`: probabilities proportional
/// to `sqrt(s)`, then trimmed.
pub fn oracle_policy(true_s: &[f64], budget: f64, tau: f64) -> Result<PolicySpec> {
    let roots: Vec<f64> = true_s.iter().map(|s| s.max(0.0).sqrt()).collect();
    policy_from_scores(&roots, budget, tau, PolicyKind::Oracle)
}
