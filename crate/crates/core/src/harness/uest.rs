//! Monte Carlo trials for active U-estimation on pairwise ranking.
//!
//! One pool of `n` units is fixed per run; each trial draws fresh labeling
//! uniforms shared by every method and budget. `noml` and `semi` label a
//! uniform subset with inclusion probability `n_b / n`; `act` labels with the
//! A-optimal policy built from a pilot estimate.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_dgp, linear_theta_star, DgpKind, DgpSpec};
use super::{derive_seed, streams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::ActiveSample;
use crate::kernels::LabelValue;
use crate::learners::{ridge_regressor, LearnerSpec, RegressionModel, DEFAULT_RIDGE_LAMBDA};
use crate::numeric::{mean, sample_variance};
use crate::policy::{draw_uniforms, policy_from_scores, PolicyKind, PolicySpec, DEFAULT_TAU};
use crate::uerm::{
    a_optimal_scores, active_urisk_objective, minimize, minimize_empirical_urisk, sandwich_covariance, semi_objective,
    OptimOptions, STABILIZER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UMethod {
    /// Empirical U-risk on a uniformly labeled subset only.
    NoMl,
    /// Cross pairs of labeled points against pseudo-labels.
    Semi,
    /// Active U-risk under the A-optimal policy.
    Act,
}

impl UMethod {
    pub const ALL: [UMethod; 3] = [UMethod::NoMl, UMethod::Semi, UMethod::Act];

    pub fn name(self) -> &'static str {
        match self {
            UMethod::NoMl => "noml",
            UMethod::Semi => "semi",
            UMethod::Act => "act",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        UMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::arg(format!("unknown U-estimation method '{s}'")))
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(|t| UMethod::parse(t.trim())).collect()
    }
}

/// Where the pilot labels for the A-optimal policy come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PilotSource {
    /// A uniform subset of a separate labeled historical set; free of charge.
    Historical,
    /// A uniform subset of the pool itself, deducted from `act`'s budget
    /// when `deduct` is set.
    Queried { deduct: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UestConfig {
    pub budgets: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<UMethod>,
    pub pilot_budget: usize,
    pub pilot_source: PilotSource,
    pub tau: f64,
    pub seed: u64,
    /// Learner for the A-optimal score `sqrt(S(x))`.
    pub score_learner: LearnerSpec,
    /// Ridge penalty of the pseudo-labeling model when predictions are not given.
    pub mu_lambda: f64,
    pub optim: OptimOptions,
    /// Also compute the sandwich covariance for every `act` fit.
    pub sandwich: bool,
    /// Simulation only: pseudo-labels `Y + N(0, s^2)` instead of a ridge fit.
    pub pseudo_noise: Option<f64>,
}

impl UestConfig {
    pub fn new(budgets: Vec<f64>, trials: usize, seed: u64) -> Self {
        UestConfig {
            budgets,
            trials,
            methods: UMethod::ALL.to_vec(),
            pilot_budget: 200,
            pilot_source: PilotSource::Historical,
            tau: DEFAULT_TAU,
            seed,
            score_learner: LearnerSpec::Knn { k: 0 },
            mu_lambda: DEFAULT_RIDGE_LAMBDA,
            optim: OptimOptions::default(),
            sandwich: false,
            pseudo_noise: None,
        }
    }
}

/// `y_i + s * N(0, 1)` from a seeded stream.
pub fn noisy_labels(y: &[f64], s: f64, seed: u64) -> Result<Vec<f64>> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::arg(format!("pseudo-label noise must be >= 0, got {s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(y.iter().map(|v| v + s * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// A linear-ranking pool plus a same-size labeled historical set.
pub fn linear_ranking_data(n: usize, p: usize, noise_sigma: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let spec = |stream| DgpSpec {
        kind: DgpKind::LinearRanking,
        p,
        n,
        noise_sigma,
        seed: derive_seed(seed, stream, 0),
    };
    Ok((
        generate_dgp(&spec(streams::DATA))?,
        generate_dgp(&spec(streams::HISTORICAL))?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UTrialRecord {
    pub trial: usize,
    pub method: String,
    pub budget: f64,
    pub theta: Vec<f64>,
    /// `|theta - theta_ref|^2`.
    pub sq_error: f64,
    /// Angle to `theta*` in degrees, when `theta*` is known.
    pub angle_deg: Option<f64>,
    pub n_lab: usize,
    pub iterations: usize,
    /// Row-major sandwich covariance, when requested.
    pub sandwich_cov: Option<Vec<f64>>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct USummary {
    pub method: String,
    pub budget: f64,
    pub trials: usize,
    pub excluded: usize,
    pub mse: f64,
    pub mse_se: f64,
    pub mean_angle_deg: Option<f64>,
    pub mean_n_lab: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UestOutput {
    pub config: UestConfig,
    pub n: usize,
    pub p: usize,
    /// Data-generating `theta*`, when known.
    pub theta_star: Option<Vec<f64>>,
    /// Full-label U-risk minimizer on the pool; errors are measured against it.
    pub theta_ref: Vec<f64>,
    pub theta_pilot: Vec<f64>,
    pub records: Vec<UTrialRecord>,
    pub excluded: Vec<(String, f64)>,
    pub summaries: Vec<USummary>,
}

impl UestOutput {
    /// Squared errors of two methods at one budget over the trials where both succeeded.
    pub fn paired_sq_errors(&self, a: UMethod, b: UMethod, budget: f64) -> (Vec<f64>, Vec<f64>) {
        let get = |m: UMethod| {
            self.records
                .iter()
                .filter(move |r| r.method == m.name() && r.budget == budget)
        };
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for ra in get(a) {
            if let Some(rb) = get(b).find(|r| r.trial == ra.trial) {
                xs.push(ra.sq_error);
                ys.push(rb.sq_error);
            }
        }
        (xs, ys)
    }

    pub fn summary(&self, method: UMethod, budget: f64) -> Option<&USummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method.name() && s.budget == budget)
    }
}

fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

struct Prepared {
    pool: Dataset,
    y: Vec<f64>,
    yhat: Vec<f64>,
    theta_pilot: Vec<f64>,
    theta_ref: Vec<f64>,
    /// Active policy per budget.
    act_policies: Vec<Option<PolicySpec>>,
}

fn prepare(cfg: &UestConfig, pool: Dataset, historical: Option<&Dataset>) -> Result<Prepared> {
    let n = pool.n();
    let y = pool.labels()?.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::PILOT, 0));
    let (pilot_set, deduct) = match (cfg.pilot_source, historical) {
        (PilotSource::Historical, Some(h)) => (h.clone(), 0.0),
        (PilotSource::Historical, None) => {
            return Err(Error::arg("a historical pilot source needs a historical labeled set"))
        }
        (PilotSource::Queried { deduct }, _) => (pool.clone(), if deduct { cfg.pilot_budget as f64 } else { 0.0 }),
    };
    if cfg.pilot_budget > pilot_set.n() {
        return Err(Error::arg(format!(
            "pilot budget {} exceeds the {} available units",
            cfg.pilot_budget,
            pilot_set.n()
        )));
    }
    let mut pilot_idx = sample_indices(&mut rng, pilot_set.n(), cfg.pilot_budget).into_vec();
    pilot_idx.sort_unstable();
    let pilot = pilot_set.select(&pilot_idx);

    // Pseudo-labels: given predictions, else ridge on the historical set, else on the pilot.
    let (yhat, pilot_yhat) = match &pool.yhat {
        Some(yh) => {
            let pilot_yhat = match (&pilot.yhat, cfg.pilot_source) {
                (Some(p), _) => p.clone(),
                (None, PilotSource::Queried { .. }) => pilot_idx.iter().map(|&i| yh[i]).collect(),
                (None, PilotSource::Historical) => {
                    return Err(Error::arg("historical set needs predictions when the pool has them"))
                }
            };
            (yh.clone(), pilot_yhat)
        }
        None => {
            let train = historical.unwrap_or(&pilot);
            let mut mu = ridge_regressor(cfg.mu_lambda)?;
            mu.fit(&train.x, train.labels()?)?;
            (mu.predict_all(&pool.x), mu.predict_all(&pilot.x))
        }
    };

    let all: Vec<usize> = (0..pilot.n()).collect();
    let theta_pilot = minimize_empirical_urisk(&pilot.x, pilot.labels()?, &all, None, cfg.optim)?.theta;
    let theta_ref =
        minimize_empirical_urisk(&pool.x, &y, &(0..n).collect::<Vec<_>>(), Some(&theta_pilot), cfg.optim)?.theta;

    let act_policies = if cfg.methods.contains(&UMethod::Act) {
        let fit = a_optimal_scores(&pilot.x, pilot.labels()?, &pilot_yhat, &theta_pilot, cfg.score_learner)?;
        let scores = fit.scores(&pool.x);
        cfg.budgets
            .iter()
            .map(|&b| {
                let b_act = b - deduct;
                if b_act <= 0.0 {
                    log::warn!("budget {b} is used up by the pilot; act is skipped there");
                    Ok(None)
                } else {
                    policy_from_scores(&scores, b_act, cfg.tau, PolicyKind::Active).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; cfg.budgets.len()]
    };

    Ok(Prepared {
        pool,
        y,
        yhat,
        theta_pilot,
        theta_ref,
        act_policies,
    })
}

struct Fit {
    theta: Vec<f64>,
    n_lab: usize,
    iterations: usize,
    sandwich: Option<Vec<f64>>,
}

fn fit_one(cfg: &UestConfig, prep: &Prepared, method: UMethod, bi: usize, uniforms: &[f64]) -> Result<Fit> {
    let n = prep.pool.n();
    let budget = cfg.budgets[bi];
    let x = &prep.pool.x;
    match method {
        UMethod::NoMl | UMethod::Semi => {
            let cut = budget / n as f64;
            let labeled: Vec<usize> = (0..n).filter(|&i| uniforms[i] <= cut).collect();
            let out = if method == UMethod::NoMl {
                minimize_empirical_urisk(x, &prep.y, &labeled, None, cfg.optim)?
            } else {
                let obj = semi_objective(x, &prep.y, &prep.yhat, &labeled)?.with_stabilizer(STABILIZER);
                minimize(&obj, &vec![0.0; x.p()], cfg.optim)?
            };
            Ok(Fit {
                theta: out.theta,
                n_lab: labeled.len(),
                iterations: out.iterations,
                sandwich: None,
            })
        }
        UMethod::Act => {
            let policy = prep.act_policies[bi]
                .as_ref()
                .ok_or_else(|| Error::estimation("no active budget left after the pilot"))?;
            let y = &prep.y;
            let sample = ActiveSample::draw(policy.probs.clone(), uniforms.to_vec(), policy.budget, |i| {
                LabelValue::Scalar(y[i])
            })?
            .with_predictions(prep.yhat.iter().map(|&v| LabelValue::Scalar(v)).collect())?
            .with_covariates(x.clone())?;
            let obj = active_urisk_objective(&sample)?.with_stabilizer(STABILIZER);
            let out = minimize(&obj, &prep.theta_pilot, cfg.optim)?;
            let sandwich = if cfg.sandwich {
                Some(sandwich_covariance(&sample, &out.theta)?.0)
            } else {
                None
            };
            Ok(Fit {
                theta: out.theta,
                n_lab: sample.n_lab(),
                iterations: out.iterations,
                sandwich,
            })
        }
    }
}

type TrialOut = (Vec<UTrialRecord>, Vec<(String, f64)>);

fn run_trial(cfg: &UestConfig, prep: &Prepared, theta_star: Option<&[f64]>, trial: usize) -> Result<TrialOut> {
    let uniforms = draw_uniforms(prep.pool.n(), derive_seed(cfg.seed, streams::UNIFORMS, trial as u64));
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (bi, &budget) in cfg.budgets.iter().enumerate() {
        for &method in &cfg.methods {
            let start = Instant::now();
            match fit_one(cfg, prep, method, bi, &uniforms) {
                Ok(f) => {
                    let sq_error = f
                        .theta
                        .iter()
                        .zip(&prep.theta_ref)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    records.push(UTrialRecord {
                        trial,
                        method: method.name().to_string(),
                        budget,
                        sq_error,
                        angle_deg: theta_star.map(|t| angle_deg(&f.theta, t)),
                        theta: f.theta,
                        n_lab: f.n_lab,
                        iterations: f.iterations,
                        sandwich_cov: f.sandwich,
                        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
                    });
                }
                Err(Error::Estimation(msg)) => {
                    log::debug!("trial {trial} {} at {budget}: {msg}", method.name());
                    excluded.push((method.name().to_string(), budget));
                }
                Err(Error::NotConverged {
                    iterations, grad_norm, ..
                }) => {
                    log::warn!(
                        "trial {trial} {} at {budget}: no convergence after {iterations} iterations (|g| = {grad_norm:e})",
                        method.name()
                    );
                    excluded.push((method.name().to_string(), budget));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((records, excluded))
}

fn summarize(cfg: &UestConfig, records: &[UTrialRecord], excluded: &[(String, f64)]) -> Vec<USummary> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &budget in &cfg.budgets {
            let cell: Vec<&UTrialRecord> = records
                .iter()
                .filter(|r| r.method == method.name() && r.budget == budget)
                .collect();
            let sq: Vec<f64> = cell.iter().map(|r| r.sq_error).collect();
            let angles: Option<Vec<f64>> = cell.iter().map(|r| r.angle_deg).collect();
            let t = cell.len();
            out.push(USummary {
                method: method.name().to_string(),
                budget,
                trials: t,
                excluded: excluded
                    .iter()
                    .filter(|(m, b)| m == method.name() && *b == budget)
                    .count(),
                mse: if t > 0 { mean(&sq) } else { f64::NAN },
                mse_se: if t > 1 {
                    (sample_variance(&sq) / t as f64).sqrt()
                } else {
                    f64::NAN
                },
                mean_angle_deg: angles.filter(|a| !a.is_empty()).map(|a| mean(&a)),
                mean_n_lab: if t > 0 {
                    cell.iter().map(|r| r.n_lab as f64).sum::<f64>() / t as f64
                } else {
                    f64::NAN
                },
            });
        }
    }
    out
}

/// Runs U-estimation trials on a fixed pool (labels act as the oracle).
/// `historical` supplies pilot labels for [`PilotSource::Historical`] and
/// trains the pseudo-labeler when the pool carries no predictions.
pub fn run_uestimation(
    cfg: &UestConfig,
    pool: Dataset,
    historical: Option<&Dataset>,
    theta_star: Option<Vec<f64>>,
) -> Result<UestOutput> {
    if cfg.trials == 0 || cfg.methods.is_empty() || cfg.budgets.is_empty() {
        return Err(Error::arg("trials, methods and budgets must be non-empty"));
    }
    let n = pool.n();
    let p = pool.x.p();
    if let Some(b) = cfg.budgets.iter().find(|&&b| !(b > 0.0 && b <= n as f64)) {
        return Err(Error::arg(format!("budget {b} outside (0, n]")));
    }
    if cfg.pilot_budget < p + 1 {
        return Err(Error::arg(format!("pilot budget must be at least p + 1 = {}", p + 1)));
    }
    let prep = prepare(cfg, pool, historical)?;
    let outs: Vec<TrialOut> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &prep, theta_star.as_deref(), t))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (r, e) in outs {
        records.extend(r);
        excluded.extend(e);
    }
    let summaries = summarize(cfg, &records, &excluded);
    Ok(UestOutput {
        config: cfg.clone(),
        n,
        p,
        theta_star,
        theta_ref: prep.theta_ref,
        theta_pilot: prep.theta_pilot,
        records,
        excluded,
        summaries,
    })
}

/// Linear-ranking simulation: a pool and historical set of `n` points each.
pub fn run_uestimation_trials(cfg: &UestConfig, n: usize, p: usize, noise_sigma: f64) -> Result<UestOutput> {
    let (mut pool, mut historical) = linear_ranking_data(n, p, noise_sigma, cfg.seed)?;
    if let Some(s) = cfg.pseudo_noise {
        pool.yhat = Some(noisy_labels(pool.labels()?, s, derive_seed(cfg.seed, streams::FIT, 1))?);
        historical.yhat = Some(noisy_labels(
            historical.labels()?,
            s,
            derive_seed(cfg.seed, streams::FIT, 2),
        )?);
    }
    run_uestimation(cfg, pool, Some(&historical), Some(linear_theta_star(p)))
}
