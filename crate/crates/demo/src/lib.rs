//! Browser bindings: sampling-policy shape, estimator spread under repeated
//! labeling, and fast versus naive kernel sums. Results are JSON strings.

use activeu::data::label_values;
use activeu::error::{Error, Result};
use activeu::estimators::{hajek_ipw_u, normalized_aipw_u, u_statistic, ActiveSample};
use activeu::harness::dgp::{conditional_mean, generate_dgp, oracle_scores, DgpKind, DgpSpec};
use activeu::harness::{derive_seed, streams};
use activeu::hoeffding::{estimate_h1, ProjectionKind};
use activeu::kernels::{
    builtin_kernel, fast_gini_pairwise_sum, fast_kendall_sum, naive_gini_pairwise_sum, naive_kendall_sum, KernelSpec,
    LabelValue,
};
use activeu::numeric::sample_variance;
use activeu::policy::{draw_uniforms, policy_from_scores, PolicyKind, PolicySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const P: usize = 4;
const ORACLE_DRAWS: usize = 50;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

struct Setting {
    kernel: KernelSpec,
    labels: Vec<LabelValue>,
    preds: Vec<LabelValue>,
    scores: Vec<f64>,
}

/// Synthetic data with exact conditional-mean predictions and oracle scores.
fn setting(n: usize, seed: u64) -> Result<Setting> {
    let kind = DgpKind::AppendixC1;
    let data = generate_dgp(&DgpSpec::new(kind, n, P, derive_seed(seed, streams::DATA, 0)))?;
    let kernel = builtin_kernel("gini")?;
    let shape = kernel.label_shape();
    let yhat: Vec<f64> = data.x.rows().map(|r| conditional_mean(kind, r)).collect();
    let labels = label_values(shape, data.labels()?, &data.x);
    let preds = label_values(shape, &yhat, &data.x);
    let fit_seed = derive_seed(seed, streams::FIT, 0);
    let h1 = estimate_h1(&labels, &kernel, ProjectionKind::TrueLabel, fit_seed)?;
    let h1_mu = estimate_h1(&preds, &kernel, ProjectionKind::Prediction, fit_seed)?;
    let oracle_seed = derive_seed(seed, streams::ORACLE, 0);
    let scores = oracle_scores(
        kind,
        kind.default_sigma(),
        &data.x,
        &yhat,
        &h1,
        &h1_mu,
        shape,
        ORACLE_DRAWS,
        oracle_seed,
    )?;
    Ok(Setting {
        kernel,
        labels,
        preds,
        scores,
    })
}

#[derive(Serialize)]
struct PolicyCurve {
    /// Sorted by score.
    scores: Vec<f64>,
    probs: Vec<f64>,
    expected_labels: f64,
    floor: f64,
}

/// Inclusion probabilities against the oracle score for `n` synthetic units.
#[wasm_bindgen]
pub fn policy_curve(n: usize, budget: f64, tau: f64, seed: u64) -> std::result::Result<String, JsError> {
    policy_curve_json(n, budget, tau, seed).map_err(js_err)
}

fn policy_curve_json(n: usize, budget: f64, tau: f64, seed: u64) -> Result<String> {
    let s = setting(n, seed)?;
    let policy = policy_from_scores(&s.scores, budget, tau, PolicyKind::Active)?;
    let mut pts: Vec<(f64, f64)> = s.scores.iter().copied().zip(policy.probs.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let curve = PolicyCurve {
        scores: pts.iter().map(|p| p.0).collect(),
        probs: pts.iter().map(|p| p.1).collect(),
        expected_labels: policy.probs.iter().sum(),
        floor: (1.0 - tau) * budget / n as f64,
    };
    Ok(serde_json::to_string(&curve)?)
}

#[derive(Serialize)]
struct Spread {
    target: f64,
    classical: Vec<f64>,
    uniform: Vec<f64>,
    active: Vec<f64>,
    sd: [f64; 3],
}

/// Gini estimates over `trials` labeling redraws of one dataset. The three
/// estimators share uniforms in every trial.
#[wasm_bindgen]
pub fn estimator_spread(
    n: usize,
    budget: f64,
    tau: f64,
    trials: usize,
    seed: u64,
) -> std::result::Result<String, JsError> {
    estimator_spread_json(n, budget, tau, trials, seed).map_err(js_err)
}

fn estimator_spread_json(n: usize, budget: f64, tau: f64, trials: usize, seed: u64) -> Result<String> {
    let s = setting(n, seed)?;
    let target = u_statistic(&s.labels, &s.kernel)?;
    let uniform = PolicySpec::uniform(n, budget)?.probs;
    let active = policy_from_scores(&s.scores, budget, tau, PolicyKind::Active)?.probs;
    let draw = |probs: &[f64], u: Vec<f64>| -> Result<ActiveSample> {
        ActiveSample::draw(probs.to_vec(), u, budget, |i| s.labels[i])?.with_predictions(s.preds.clone())
    };
    let (mut c, mut un, mut ac) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..trials {
        let u = draw_uniforms(n, derive_seed(seed, streams::UNIFORMS, t as u64));
        let su = draw(&uniform, u.clone())?;
        let sa = draw(&active, u)?;
        // Trials with too few labels for a pair are skipped.
        if let (Ok(a), Ok(b), Ok(d)) = (
            hajek_ipw_u(&su, &s.kernel),
            normalized_aipw_u(&su, &s.kernel),
            normalized_aipw_u(&sa, &s.kernel),
        ) {
            c.push(a);
            un.push(b);
            ac.push(d);
        }
    }
    let sd = |v: &[f64]| {
        if v.len() > 1 {
            sample_variance(v).sqrt()
        } else {
            f64::NAN
        }
    };
    let out = Spread {
        target,
        sd: [sd(&c), sd(&un), sd(&ac)],
        classical: c,
        uniform: un,
        active: ac,
    };
    Ok(serde_json::to_string(&out)?)
}

/// Sum of the Gini or Kendall kernel over all pairs of `n` random points,
/// by sorting (`naive = false`) or by enumeration.
#[wasm_bindgen]
pub fn kernel_sum(kernel: &str, n: usize, seed: u64, naive: bool) -> std::result::Result<f64, JsError> {
    kernel_sum_value(kernel, n, seed, naive).map_err(js_err)
}

fn kernel_sum_value(kernel: &str, n: usize, seed: u64, naive: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kernel {
        "gini" => {
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            if naive {
                Ok(naive_gini_pairwise_sum(&v))
            } else {
                fast_gini_pairwise_sum(&v)
            }
        }
        "kendall" => {
            let v: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
            if naive {
                Ok(naive_kendall_sum(&v))
            } else {
                fast_kendall_sum(&v)
            }
        }
        other => Err(Error::Argument(format!("unknown kernel '{other}'"))),
    }
}
