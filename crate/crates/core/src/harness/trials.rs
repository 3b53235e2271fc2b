//! Monte Carlo estimation trials with common random numbers.
//!
//! Under [`Protocol::Fixed`] one dataset, pilot and model fit are shared by
//! every trial and only the labeling uniforms change; every estimator is then
//! unbiased for the full-label U-statistic of that dataset. Under
//! [`Protocol::Redraw`] each trial draws its own dataset, pilot and fits, and
//! intervals are checked against the population reference. Within a trial
//! every method and budget reuses one uniform vector.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_dgp, oracle_scores, reference_value, DgpKind, DgpSpec};
use super::summary::{summarize, MethodSummary, TrialRecord};
use super::{derive_seed, streams};
use crate::data::{label_values, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{aipw_from_parts, labeled_sums, u_statistic, ActiveSample};
use crate::hoeffding::{estimate_h1, ProjectionKind};
use crate::inference::{confidence_interval, variance_estimate, Centering, DEFAULT_ALPHA};
use crate::kernels::{builtin_kernel, KernelSpec, LabelValue};
use crate::learners::LearnerSpec;
use crate::policy::{
    active_policy, draw_uniforms, fit_score_model, oracle_policy, policy_from_scores, PolicyKind, PolicySpec,
    PredictionSource, ScoreForm, ScoreTarget, UncertaintyFit, DEFAULT_TAU,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Hájek IPW under uniform sampling, no predictions.
    Classical,
    /// Normalized AIPW under uniform sampling.
    Uniform,
    /// Normalized AIPW under the learned projection-residual policy.
    Active,
    /// Normalized AIPW under the learned `|Y - Yhat|` policy.
    PluginActY,
    /// Normalized AIPW under probabilities built from simulated optimal scores.
    Oracle,
    ActiveUnnormalized,
    UniformUnnormalized,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Classical,
        Method::Uniform,
        Method::Active,
        Method::PluginActY,
        Method::Oracle,
        Method::ActiveUnnormalized,
        Method::UniformUnnormalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Classical => "classical",
            Method::Uniform => "uniform",
            Method::Active => "active",
            Method::PluginActY => "plugin-act-y",
            Method::Oracle => "oracle",
            Method::ActiveUnnormalized => "active-unnormalized",
            Method::UniformUnnormalized => "uniform-unnormalized",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::arg(format!("unknown method '{s}'")))
    }

    /// Parses a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(|t| Method::parse(t.trim())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Fixed,
    Redraw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dgp: DgpKind,
    pub n: usize,
    pub p: usize,
    pub noise_sigma: f64,
    pub kernel: String,
    pub budgets: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub tau: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Size of the labeled historical pilot used to fit `mu` and `V`.
    pub pilot_size: usize,
    pub mu_learner: LearnerSpec,
    pub score_learner: LearnerSpec,
    /// Shared by the `active` and `plugin-act-y` score models.
    pub score_form: ScoreForm,
    pub protocol: Protocol,
    /// Noise draws per unit when simulating optimal scores for `oracle`.
    pub oracle_draws: usize,
}

impl SimConfig {
    pub fn new(dgp: DgpKind, n: usize, p: usize, kernel: &str, budgets: Vec<f64>, trials: usize, seed: u64) -> Self {
        SimConfig {
            dgp,
            n,
            p,
            noise_sigma: dgp.default_sigma(),
            kernel: kernel.to_string(),
            budgets,
            trials,
            methods: vec![Method::Classical, Method::Uniform, Method::Active],
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            seed,
            pilot_size: 1000,
            mu_learner: LearnerSpec::Knn { k: 0 },
            score_learner: LearnerSpec::Knn { k: 0 },
            score_form: ScoreForm::Absolute,
            protocol: Protocol::Fixed,
            oracle_draws: 200,
        }
    }

    fn validate(&self) -> Result<KernelSpec> {
        let kernel = builtin_kernel(&self.kernel)?;
        if self.trials == 0 {
            return Err(Error::arg("trials must be >= 1"));
        }
        if self.methods.is_empty() || self.budgets.is_empty() {
            return Err(Error::arg("at least one method and one budget are required"));
        }
        if let Some(b) = self.budgets.iter().find(|&&b| !(b > 0.0 && b <= self.n as f64)) {
            return Err(Error::arg(format!("budget {b} outside (0, n]")));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::arg(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::arg(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(kernel)
    }
}

/// Everything the trials share under one dataset realization.
struct Setting {
    values: Vec<LabelValue>,
    preds: Vec<LabelValue>,
    plug_in: f64,
    h1: Vec<f64>,
    h1_mu: Vec<f64>,
    zeros: Vec<f64>,
    /// `policies[b][m]` for budget index `b` and method index `m`.
    policies: Vec<Vec<PolicySpec>>,
    target: f64,
}

fn fit_projection_policy(
    cfg: &SimConfig,
    kernel: &KernelSpec,
    pilot: &Dataset,
    seed: u64,
    target: ScoreTarget,
) -> Result<UncertaintyFit> {
    fit_score_model(
        pilot,
        PredictionSource::Train(cfg.mu_learner),
        kernel,
        cfg.score_learner,
        seed,
        target,
        cfg.score_form,
    )
}

fn build_setting(cfg: &SimConfig, kernel: &KernelSpec, index: u64, population: f64) -> Result<Setting> {
    let dgp = |n, stream| DgpSpec {
        kind: cfg.dgp,
        p: cfg.p,
        n,
        noise_sigma: cfg.noise_sigma,
        seed: derive_seed(cfg.seed, stream, index),
    };
    let data = generate_dgp(&dgp(cfg.n, streams::DATA))?;
    let pilot = generate_dgp(&dgp(cfg.pilot_size, streams::PILOT))?;
    let fit_seed = derive_seed(cfg.seed, streams::FIT, index);
    let fit = fit_projection_policy(cfg, kernel, &pilot, fit_seed, ScoreTarget::Projection)?;
    let mu = fit
        .prediction_model
        .as_ref()
        .expect("prediction model trained on the pilot");
    let shape = kernel.label_shape();
    let y = data.labels()?;
    let yhat = mu.predict_all(&data.x);
    let values = label_values(shape, y, &data.x);
    let preds = label_values(shape, &yhat, &data.x);
    let plug_in = u_statistic(&preds, kernel)?;
    let target = match cfg.protocol {
        Protocol::Fixed => u_statistic(&values, kernel)?,
        Protocol::Redraw => population,
    };

    let residual_fit = if cfg.methods.contains(&Method::PluginActY) {
        Some(fit_projection_policy(
            cfg,
            kernel,
            &pilot,
            fit_seed,
            ScoreTarget::Residual,
        )?)
    } else {
        None
    };
    let oracle_s = if cfg.methods.contains(&Method::Oracle) {
        // Population projections from a fresh labeled sample and its predictions.
        let big = generate_dgp(&dgp(crate::hoeffding::PILOT_CAP, streams::ORACLE))?;
        let big_pred = mu.predict_all(&big.x);
        let h1 = estimate_h1(
            &label_values(shape, big.labels()?, &big.x),
            kernel,
            ProjectionKind::TrueLabel,
            fit_seed,
        )?;
        let h1_mu = estimate_h1(
            &label_values(shape, &big_pred, &big.x),
            kernel,
            ProjectionKind::Prediction,
            fit_seed,
        )?;
        Some(oracle_scores(
            cfg.dgp,
            cfg.noise_sigma,
            &data.x,
            &yhat,
            &h1,
            &h1_mu,
            shape,
            cfg.oracle_draws,
            derive_seed(cfg.seed, streams::ORACLE, index),
        )?)
    } else {
        None
    };

    let policies = cfg
        .budgets
        .iter()
        .map(|&b| {
            cfg.methods
                .iter()
                .map(|m| match m {
                    Method::Classical | Method::Uniform | Method::UniformUnnormalized => PolicySpec::uniform(cfg.n, b),
                    Method::Active | Method::ActiveUnnormalized => active_policy(&fit, &data.x, b, cfg.tau),
                    Method::PluginActY => {
                        let rf = residual_fit.as_ref().expect("residual fit built");
                        policy_from_scores(&rf.scores(&data.x), b, cfg.tau, PolicyKind::Residual)
                    }
                    Method::Oracle => oracle_policy(oracle_s.as_ref().expect("oracle scores built"), b, cfg.tau),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Setting {
        h1: fit.h1.eval_many(&values),
        h1_mu: fit.h1_mu.eval_many(&preds),
        zeros: vec![0.0; cfg.n],
        values,
        preds,
        plug_in,
        policies,
        target,
    })
}

struct Estimate {
    estimate: f64,
    sigma2: f64,
    n_lab: usize,
}

fn estimate_one(
    setting: &Setting,
    kernel: &KernelSpec,
    method: Method,
    policy: &PolicySpec,
    uniforms: &[f64],
) -> Result<Estimate> {
    let values = &setting.values;
    let sample = ActiveSample::draw(policy.probs.clone(), uniforms.to_vec(), policy.budget, |i| values[i])?;
    let r = kernel.degree();
    let (estimate, h1_mu, centering) = match method {
        Method::Classical => {
            let sums = labeled_sums(&sample, kernel)?;
            if !(sums.n_hat > 0.0) {
                return Err(Error::estimation("no labeled tuple"));
            }
            (sums.label_sum / sums.n_hat, &setting.zeros, Centering::Hajek)
        }
        _ => {
            let sample = sample.clone().with_predictions(setting.preds.clone())?;
            let normalized = !matches!(method, Method::ActiveUnnormalized | Method::UniformUnnormalized);
            let sums = labeled_sums(&sample, kernel)?;
            let est = aipw_from_parts(setting.plug_in, &sums, normalized)?;
            let centering = if normalized { Centering::Hajek } else { Centering::None };
            (est, &setting.h1_mu, centering)
        }
    };
    let var = variance_estimate(&sample, &setting.h1, h1_mu, r, centering)?;
    Ok(Estimate {
        estimate,
        sigma2: var.sigma2,
        n_lab: sample.n_lab(),
    })
}

/// Records and summaries of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub config: SimConfig,
    /// Population `theta*_ref` from the cached reference sample.
    pub population_reference: f64,
    /// Full-label U-statistic of the shared dataset (fixed protocol only).
    pub fixed_target: Option<f64>,
    pub records: Vec<TrialRecord>,
    /// `(method, budget)` of every trial that could not be estimated.
    pub excluded: Vec<(String, f64)>,
    pub summaries: Vec<MethodSummary>,
}

impl SimulationOutput {
    /// Estimates of `method` at `budget`, ordered by trial.
    pub fn estimates(&self, method: Method, budget: f64) -> Vec<f64> {
        self.cell(method, budget).map(|r| r.estimate).collect()
    }

    pub fn cell(&self, method: Method, budget: f64) -> impl Iterator<Item = &TrialRecord> {
        self.records
            .iter()
            .filter(move |r| r.method == method.name() && r.budget == budget)
    }

    pub fn summary(&self, method: Method, budget: f64) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method.name() && s.budget == budget)
    }
}

type TrialOut = (Vec<TrialRecord>, Vec<(String, f64)>);

fn run_trial(
    cfg: &SimConfig,
    kernel: &KernelSpec,
    shared: Option<&Setting>,
    population: f64,
    trial: usize,
) -> Result<TrialOut> {
    let owned;
    let setting = match shared {
        Some(s) => s,
        None => match build_setting(cfg, kernel, trial as u64 + 1, population) {
            Ok(s) => {
                owned = s;
                &owned
            }
            Err(Error::Estimation(msg)) => {
                log::warn!("trial {trial}: setting could not be built: {msg}");
                let all = cfg
                    .budgets
                    .iter()
                    .flat_map(|&b| cfg.methods.iter().map(move |m| (m.name().to_string(), b)))
                    .collect();
                return Ok((Vec::new(), all));
            }
            Err(e) => return Err(e),
        },
    };
    let uniforms = draw_uniforms(cfg.n, derive_seed(cfg.seed, streams::UNIFORMS, trial as u64));
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (bi, &budget) in cfg.budgets.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let start = Instant::now();
            match estimate_one(setting, kernel, method, &setting.policies[bi][mi], &uniforms) {
                Ok(e) => {
                    let (ci_low, ci_high) = confidence_interval(e.estimate, e.sigma2, cfg.n, cfg.alpha)?;
                    records.push(TrialRecord {
                        trial,
                        method: method.name().to_string(),
                        budget,
                        estimate: e.estimate,
                        ci_low,
                        ci_high,
                        covered: ci_low <= setting.target && setting.target <= ci_high,
                        n_lab: e.n_lab,
                        sigma2_hat: e.sigma2,
                        target: setting.target,
                        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
                    });
                }
                Err(Error::Estimation(_)) => excluded.push((method.name().to_string(), budget)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok((records, excluded))
}

/// Runs every trial of `cfg` (in parallel on the rayon pool) and summarizes.
/// Results do not depend on the number of worker threads.
pub fn run_estimation_trials(cfg: &SimConfig) -> Result<SimulationOutput> {
    let kernel = cfg.validate()?;
    let population = reference_value(cfg.dgp, cfg.p, cfg.noise_sigma, &kernel)?;
    let shared = match cfg.protocol {
        Protocol::Fixed => Some(build_setting(cfg, &kernel, 0, population)?),
        Protocol::Redraw => None,
    };
    let outs: Vec<TrialOut> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &kernel, shared.as_ref(), population, t))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (r, e) in outs {
        records.extend(r);
        excluded.extend(e);
    }
    if !excluded.is_empty() {
        log::warn!("{} estimates excluded for insufficient labels", excluded.len());
    }
    let summaries = summarize(&records, &excluded, Method::Classical.name());
    Ok(SimulationOutput {
        config: cfg.clone(),
        population_reference: population,
        fixed_target: shared.as_ref().map(|s| s.target),
        records,
        excluded,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert_eq!(
            Method::parse_list("classical, active").unwrap(),
            vec![Method::Classical, Method::Active]
        );
        assert!(Method::parse("bogus").is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::new(DgpKind::AppendixC1, 100, 4, "gini", vec![20.0], 2, 1);
        assert!(cfg.validate().is_ok());
        cfg.budgets = vec![200.0];
        assert!(cfg.validate().is_err());
        cfg.budgets = vec![20.0];
        cfg.kernel = "nope".into();
        assert!(cfg.validate().is_err());
    }
}
