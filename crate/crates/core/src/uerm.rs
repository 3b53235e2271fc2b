//! Active U-estimation for pairwise ranking.
//!
//! The loss is the pairwise logistic loss
//! `l(theta; z1, z2) = log(1 + exp(-s theta'(x1 - x2)))` with
//! `s = sign(y1 - y2)`. Risks are weighted sums of such pair terms; every
//! objective handed to the optimizer also carries a small ridge term
//! [`STABILIZER`]` * |theta|^2` so that separable data still have a finite
//! minimizer.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Features;
use crate::error::{Error, Result};
use crate::estimators::ActiveSample;
use crate::kernels::binomial;
use crate::learners::{LearnerSpec, RegressionModel};
use crate::numeric::NeumaierSum;

/// Coefficient of the `|theta|^2` term added to every optimized objective.
pub const STABILIZER: f64 = 1e-6;

/// Ridge added to a singular Hessian before inversion.
pub const HESSIAN_RIDGE: f64 = 1e-6;

/// `sign(v)` with ties (and NaN) mapped to 0.
#[inline]
pub fn pair_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(phi(u), phi'(u), phi''(u))` for `phi(u) = log(1 + exp(-u))`, using a
/// single `exp(-|u|)` so neither tail overflows.
#[inline]
fn logistic_parts(u: f64) -> (f64, f64, f64) {
    let e = (-u.abs()).exp();
    let q = 1.0 / (1.0 + e);
    let value = if u >= 0.0 { e.ln_1p() } else { -u + e.ln_1p() };
    let sig_neg = if u >= 0.0 { e * q } else { q };
    (value, -sig_neg, e * q * q)
}

#[inline]
fn logistic_slope_curv(u: f64) -> (f64, f64) {
    let e = (-u.abs()).exp();
    let q = 1.0 / (1.0 + e);
    let sig_neg = if u >= 0.0 { e * q } else { q };
    (-sig_neg, e * q * q)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value, gradient and Hessian of a single pair loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Pairwise logistic loss of `(x1, y1)` against `(x2, y2)`.
///
/// Ties `y1 == y2` give `s = 0`: constant loss `log 2` with zero gradient
/// and Hessian.
pub fn pairwise_logistic_loss(theta: &[f64], x1: &[f64], y1: f64, x2: &[f64], y2: f64) -> PairLoss {
    let p = theta.len();
    let s = pair_sign(y1 - y2);
    let d: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
    if s == 0.0 {
        return PairLoss {
            value: LN_2,
            gradient: vec![0.0; p],
            hessian: DMatrix::zeros(p, p),
        };
    }
    let u = s * dot(theta, &d);
    let (value, slope, curv) = logistic_parts(u);
    let dv = DVector::from_column_slice(&d);
    PairLoss {
        value,
        gradient: d.iter().map(|di| slope * s * di).collect(),
        hessian: &dv * dv.transpose() * curv,
    }
}

#[derive(Debug, Clone)]
struct AllPairs {
    /// Unit indices sorted by decreasing label.
    idx: Vec<usize>,
    /// Labels in the same order.
    vals: Vec<f64>,
    /// Covariate rows in the same order, row-major.
    xs: Vec<f64>,
    weight: f64,
}

#[derive(Debug, Clone, Copy)]
struct PairTerm {
    i: usize,
    j: usize,
    s: f64,
    w: f64,
}

/// Risk value with optional gradient and Hessian.
#[derive(Debug, Clone)]
pub struct RiskEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Order {
    Value,
    Gradient,
    Hessian,
}

/// A weighted sum of pairwise logistic terms over the rows of `x`, plus an
/// optional `stabilizer * |theta|^2`.
///
/// Blocks of "all pairs of a set under one labeling" are stored implicitly;
/// other pair terms are stored explicitly with their sign and weight.
#[derive(Debug, Clone)]
pub struct PairObjective<'a> {
    x: &'a Features,
    blocks: Vec<AllPairs>,
    terms: Vec<PairTerm>,
    stabilizer: f64,
}

impl<'a> PairObjective<'a> {
    pub fn new(x: &'a Features) -> Self {
        PairObjective {
            x,
            blocks: Vec::new(),
            terms: Vec::new(),
            stabilizer: 0.0,
        }
    }

    pub fn with_stabilizer(mut self, stabilizer: f64) -> Self {
        self.stabilizer = stabilizer;
        self
    }

    pub fn stabilizer(&self) -> f64 {
        self.stabilizer
    }

    pub fn dim(&self) -> usize {
        self.x.p()
    }

    /// Adds `weight * sum over unordered pairs {i, j} of idx` of
    /// `l(theta; (x_i, labels[i]), (x_j, labels[j]))`.
    pub fn add_all_pairs(&mut self, idx: &[usize], labels: &[f64], weight: f64) {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| labels[b].total_cmp(&labels[a]).then(a.cmp(&b)));
        let vals = order.iter().map(|&i| labels[i]).collect();
        let xs = order.iter().flat_map(|&i| self.x.row(i).iter().copied()).collect();
        self.blocks.push(AllPairs {
            idx: order,
            vals,
            xs,
            weight,
        });
    }

    /// Adds `w * phi(s theta'(x_i - x_j))`; `s = 0` contributes `w log 2`.
    pub fn add_term(&mut self, i: usize, j: usize, s: f64, w: f64) {
        self.terms.push(PairTerm { i, j, s, w });
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.eval_order(theta, Order::Value).value
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let ev = self.eval_order(theta, Order::Gradient);
        (ev.value, ev.gradient)
    }

    pub fn eval(&self, theta: &[f64]) -> RiskEval {
        self.eval_order(theta, Order::Hessian)
    }

    fn eval_order(&self, theta: &[f64], order: Order) -> RiskEval {
        let x = self.x;
        let (n, p) = (x.n(), x.p());
        assert_eq!(theta.len(), p, "theta has the wrong dimension");
        let a: Vec<f64> = x.rows().map(|r| dot(r, theta)).collect();
        let want_grad = order != Order::Value;
        let want_hess = order == Order::Hessian;
        let mut coef = vec![0.0; if want_grad { n } else { 0 }];
        let mut hess = vec![0.0; if want_hess { p * p } else { 0 }];
        let mut value = NeumaierSum::default();
        let mut d = vec![0.0; p];

        for block in &self.blocks {
            let m = block.idx.len();
            let av: Vec<f64> = block.idx.iter().map(|&i| a[i]).collect();
            let mut c = vec![0.0; if want_grad { m } else { 0 }];
            // Hessian pieces: sum over pairs of curv (x_k - x_l)(x_k - x_l)'
            // = sum_k w_k x_k x_k' - sum_k (x_k v_k' + v_k x_k'), where w_k
            // totals the curvature at k and v_k = sum_{l > k} curv x_l.
            let mut w = vec![0.0; if want_hess { m } else { 0 }];
            let mut v = vec![0.0; if want_hess { m * p } else { 0 }];
            for k in 0..m {
                let mut row = 0.0;
                for l in k + 1..m {
                    if block.vals[k] > block.vals[l] {
                        let u = av[k] - av[l];
                        match order {
                            Order::Value => row += logistic_parts(u).0,
                            Order::Gradient => {
                                let (val, slope, _) = logistic_parts(u);
                                row += val;
                                c[k] += slope;
                                c[l] -= slope;
                            }
                            Order::Hessian => {
                                let (val, slope, curv) = logistic_parts(u);
                                row += val;
                                c[k] += slope;
                                c[l] -= slope;
                                w[k] += curv;
                                w[l] += curv;
                                let xl = &block.xs[l * p..(l + 1) * p];
                                for (vq, xq) in v[k * p..(k + 1) * p].iter_mut().zip(xl) {
                                    *vq += curv * xq;
                                }
                            }
                        }
                    } else {
                        row += LN_2;
                    }
                }
                value.add(block.weight * row);
            }
            let mut h = vec![0.0; if want_hess { p * p } else { 0 }];
            if want_hess {
                for k in 0..m {
                    let xk = &block.xs[k * p..(k + 1) * p];
                    let vk = &v[k * p..(k + 1) * p];
                    for r in 0..p {
                        for col in r..p {
                            h[r * p + col] += w[k] * xk[r] * xk[col] - xk[r] * vk[col] - vk[r] * xk[col];
                        }
                    }
                }
            }
            if want_grad {
                for (k, &i) in block.idx.iter().enumerate() {
                    coef[i] += block.weight * c[k];
                }
            }
            if want_hess {
                for (t, v) in hess.iter_mut().zip(&h) {
                    *t += block.weight * v;
                }
            }
        }

        for t in &self.terms {
            if t.s == 0.0 {
                value.add(t.w * LN_2);
                continue;
            }
            let u = t.s * (a[t.i] - a[t.j]);
            let (v, slope, curv) = logistic_parts(u);
            value.add(t.w * v);
            if want_grad {
                coef[t.i] += t.w * slope * t.s;
                coef[t.j] -= t.w * slope * t.s;
            }
            if want_hess {
                let (xi, xj) = (x.row(t.i), x.row(t.j));
                for q in 0..p {
                    d[q] = xi[q] - xj[q];
                }
                add_outer(&mut hess, &d, t.w * curv);
            }
        }

        let mut gradient = vec![0.0; if want_grad { p } else { 0 }];
        if want_grad {
            for (i, &ci) in coef.iter().enumerate() {
                if ci != 0.0 {
                    for (g, xv) in gradient.iter_mut().zip(x.row(i)) {
                        *g += ci * xv;
                    }
                }
            }
        }
        if self.stabilizer != 0.0 {
            value.add(self.stabilizer * dot(theta, theta));
            for (g, t) in gradient.iter_mut().zip(theta) {
                *g += 2.0 * self.stabilizer * t;
            }
            for q in 0..p.min(if want_hess { p } else { 0 }) {
                hess[q * p + q] += 2.0 * self.stabilizer;
            }
        }
        let hessian = want_hess.then(|| {
            let mut m = DMatrix::from_row_slice(p, p, &hess);
            for r in 0..p {
                for c in 0..r {
                    m[(r, c)] = m[(c, r)];
                }
            }
            m
        });
        RiskEval {
            value: value.sum(),
            gradient,
            hessian,
        }
    }
}

/// Adds `scale * d d'` to the upper triangle of a row-major `p x p` buffer.
#[inline]
fn add_outer(h: &mut [f64], d: &[f64], scale: f64) {
    let p = d.len();
    for r in 0..p {
        let sr = scale * d[r];
        for c in r..p {
            h[r * p + c] += sr * d[c];
        }
    }
}

/// Empirical U-risk `C(m, 2)^-1 sum l(theta; Z_i, Z_j)` over pairs of `idx`.
pub fn empirical_urisk<'a>(x: &'a Features, y: &[f64], idx: &[usize]) -> Result<PairObjective<'a>> {
    let m = idx.len();
    if m < 2 {
        return Err(Error::estimation(format!(
            "empirical U-risk needs at least 2 points, got {m}"
        )));
    }
    check_finite(y, idx, "label")?;
    let mut obj = PairObjective::new(x);
    obj.add_all_pairs(idx, y, 1.0 / binomial(m, 2));
    Ok(obj)
}

fn check_finite(v: &[f64], idx: &[usize], what: &str) -> Result<()> {
    match idx.iter().find(|&&i| !v[i].is_finite()) {
        Some(&i) => Err(Error::Domain(format!("non-finite {what} at unit {i}"))),
        None => Ok(()),
    }
}

/// Scalar labels, predictions and covariates of an active sample.
struct SampleParts<'s> {
    x: &'s Features,
    y: Vec<f64>,
    yhat: Vec<f64>,
    labeled: Vec<usize>,
}

fn sample_parts(sample: &ActiveSample) -> Result<SampleParts<'_>> {
    let x = sample
        .covariates()
        .ok_or_else(|| Error::arg("U-estimation needs covariates on the sample"))?;
    let yhat: Vec<f64> = sample
        .predictions()
        .ok_or_else(|| Error::arg("U-estimation needs predictions for every unit"))?
        .iter()
        .map(|v| v.primary())
        .collect();
    let labeled = sample.labeled_indices();
    let mut y = vec![f64::NAN; sample.n()];
    for &i in &labeled {
        y[i] = sample.label(i)?.primary();
    }
    check_finite(&y, &labeled, "label")?;
    check_finite(&yhat, &(0..sample.n()).collect::<Vec<_>>(), "prediction")?;
    Ok(SampleParts { x, y, yhat, labeled })
}

/// Active U-risk objective: the plug-in risk over all pairs of predictions
/// plus the IPW-weighted difference `l(Z pair) - l(Zhat pair)` over labeled
/// pairs. No stabilizer is attached.
pub fn active_urisk_objective(sample: &ActiveSample) -> Result<PairObjective<'_>> {
    let parts = sample_parts(sample)?;
    let n = sample.n();
    if parts.labeled.len() < 2 {
        return Err(Error::estimation("active U-risk needs at least one labeled pair"));
    }
    let total = binomial(n, 2);
    let probs = sample.probs();
    let mut obj = PairObjective::new(parts.x);
    obj.add_all_pairs(&(0..n).collect::<Vec<_>>(), &parts.yhat, 1.0 / total);
    for (a, &i) in parts.labeled.iter().enumerate() {
        for &j in &parts.labeled[a + 1..] {
            let s_true = pair_sign(parts.y[i] - parts.y[j]);
            let s_pred = pair_sign(parts.yhat[i] - parts.yhat[j]);
            if s_true != s_pred {
                let w = 1.0 / (probs[i] * probs[j] * total);
                obj.add_term(i, j, s_true, w);
                obj.add_term(i, j, s_pred, -w);
            }
        }
    }
    Ok(obj)
}

/// Value and gradient of the active U-risk at `theta`.
pub fn active_u_risk(theta: &[f64], sample: &ActiveSample) -> Result<(f64, Vec<f64>)> {
    let obj = active_urisk_objective(sample)?;
    if theta.len() != obj.dim() {
        return Err(Error::arg("theta has the wrong dimension"));
    }
    Ok(obj.value_and_gradient(theta))
}

/// Cross-pair risk `(m(m-1))^-1 sum_{i != j} l(theta; Z_i, Zhat_j)` over the
/// labeled units `idx`, pairing each true label with other units' predictions.
pub fn semi_objective<'a>(x: &'a Features, y: &[f64], yhat: &[f64], idx: &[usize]) -> Result<PairObjective<'a>> {
    let m = idx.len();
    if m < 2 {
        return Err(Error::estimation("cross-pair risk needs at least 2 labeled points"));
    }
    check_finite(y, idx, "label")?;
    check_finite(yhat, idx, "prediction")?;
    let w = 1.0 / (m * (m - 1)) as f64;
    let mut obj = PairObjective::new(x);
    for &i in idx {
        for &j in idx {
            if i != j {
                obj.add_term(i, j, pair_sign(y[i] - yhat[j]), w);
            }
        }
    }
    Ok(obj)
}

/// Stopping rule for the Newton iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    /// Stop once the gradient norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimOutcome {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub value: f64,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Damped Newton with Armijo backtracking. When the Hessian is not positive
/// definite (or gives no descent) the step falls back to steepest descent.
pub fn minimize(obj: &PairObjective, theta0: &[f64], opts: OptimOptions) -> Result<OptimOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::arg(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    if theta0.len() != obj.dim() {
        return Err(Error::arg("initial theta has the wrong dimension"));
    }
    let mut theta = theta0.to_vec();
    let mut iterations = 0;
    let mut ev = obj.eval(&theta);
    loop {
        let g = DVector::from_column_slice(&ev.gradient);
        let grad_norm = g.norm();
        if !grad_norm.is_finite() || !ev.value.is_finite() {
            return Err(Error::estimation("risk or gradient became non-finite"));
        }
        if grad_norm <= opts.tol {
            return Ok(OptimOutcome {
                theta,
                iterations,
                grad_norm,
                value: ev.value,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged {
                iterations,
                grad_norm,
                theta,
            });
        }
        iterations += 1;

        let hessian = ev.hessian.take().expect("hessian requested");
        let newton = hessian.cholesky().map(|ch| -ch.solve(&g));
        let has_newton = newton.is_some();
        let mut accepted = None;
        let candidates = newton.into_iter().chain(std::iter::once(-&g));
        for (attempt, dir) in candidates.enumerate() {
            let slope = g.dot(&dir);
            if !(slope < 0.0) {
                continue;
            }
            let is_newton = attempt == 0 && has_newton;
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
                // Full Newton steps are usually accepted, so evaluate them
                // completely and reuse the result for the next iteration.
                let full = (is_newton && t == 1.0).then(|| obj.eval(&cand));
                let f = full.as_ref().map_or_else(|| obj.value(&cand), |e| e.value);
                let armijo = f <= ev.value + ARMIJO * t * slope;
                // Near the optimum the predicted decrease drops below the
                // rounding noise of the risk; take the full Newton step there.
                let noise = 1e-14 * (1.0 + ev.value.abs());
                let tiny = is_newton && t == 1.0 && -slope <= noise && f <= ev.value + noise;
                if armijo || tiny {
                    debug_assert!(f <= ev.value + noise, "objective increased along an accepted step");
                    accepted = Some((cand, full));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some((next, full)) => {
                ev = full.unwrap_or_else(|| obj.eval(&next));
                theta = next;
            }
            None => {
                return Err(Error::NotConverged {
                    iterations,
                    grad_norm,
                    theta,
                })
            }
        }
    }
}

/// Minimizes the stabilized empirical U-risk over the pairs of `idx`.
pub fn minimize_empirical_urisk(
    x: &Features,
    y: &[f64],
    idx: &[usize],
    theta0: Option<&[f64]>,
    opts: OptimOptions,
) -> Result<OptimOutcome> {
    let obj = empirical_urisk(x, y, idx)?.with_stabilizer(STABILIZER);
    let zero = vec![0.0; x.p()];
    minimize(&obj, theta0.unwrap_or(&zero), opts)
}

/// Uniformly drawn pilot and the U-estimate fitted on its pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotStage {
    pub indices: Vec<usize>,
    pub outcome: OptimOutcome,
}

/// Draws `pilot_budget` units uniformly without replacement and minimizes
/// the empirical U-risk on their pairs.
pub fn pilot_stage(x: &Features, y: &[f64], pilot_budget: usize, seed: u64, opts: OptimOptions) -> Result<PilotStage> {
    let (n, p) = (x.n(), x.p());
    if pilot_budget < p + 1 {
        return Err(Error::arg(format!(
            "pilot budget {pilot_budget} is below p + 1 = {}",
            p + 1
        )));
    }
    if pilot_budget > n {
        return Err(Error::arg(format!("pilot budget {pilot_budget} exceeds {n} units")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample_indices(&mut rng, n, pilot_budget).into_vec();
    indices.sort_unstable();
    let outcome = minimize_empirical_urisk(x, y, &indices, None, opts)?;
    Ok(PilotStage { indices, outcome })
}

/// Hájek-weighted mean of the gradient kernel over partners, for each target:
/// `g_i = sum_k w_k grad l(theta; (x_i, v_i), (x_k, v_k)) / sum_k w_k`, over
/// `k` in `partners` with `k != i`. Returns a row-major `targets x p` buffer.
fn partner_gradient_means(
    x: &Features,
    vals: &[f64],
    theta: &[f64],
    targets: &[usize],
    partners: &[usize],
    weights: Option<&[f64]>,
) -> Vec<f64> {
    let p = x.p();
    let a: Vec<f64> = x.rows().map(|r| dot(r, theta)).collect();
    let mut out = vec![0.0; targets.len() * p];
    let mut xsum = vec![0.0; p];
    for (t, &i) in targets.iter().enumerate() {
        xsum.iter_mut().for_each(|v| *v = 0.0);
        let (mut csum, mut wsum) = (0.0, 0.0);
        for &k in partners {
            if k == i {
                continue;
            }
            let w = weights.map_or(1.0, |w| w[k]);
            wsum += w;
            let s = pair_sign(vals[i] - vals[k]);
            if s == 0.0 {
                continue;
            }
            let (slope, _) = logistic_slope_curv(s * (a[i] - a[k]));
            let c = w * slope * s;
            csum += c;
            for (acc, xv) in xsum.iter_mut().zip(x.row(k)) {
                *acc += c * xv;
            }
        }
        if wsum > 0.0 {
            let xi = x.row(i);
            for q in 0..p {
                out[t * p + q] = (csum * xi[q] - xsum[q]) / wsum;
            }
        }
    }
    out
}

/// Inverts a symmetric matrix through Cholesky, adding [`HESSIAN_RIDGE`]`* I`
/// first when it is not positive definite. Returns the inverse and whether
/// the ridge was needed.
fn regularized_inverse(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok((ch.inverse(), false));
    }
    log::warn!("Hessian is not positive definite; adding {HESSIAN_RIDGE:e} * I");
    let p = h.nrows();
    let ridged = h + DMatrix::identity(p, p) * HESSIAN_RIDGE;
    ridged
        .cholesky()
        .map(|ch| (ch.inverse(), true))
        .ok_or_else(|| Error::estimation("Hessian stays singular after regularization"))
}

/// A-optimality score model fitted on a labeled pilot.
pub struct AOptimalFit {
    /// Regression of `sqrt(target)` on covariates.
    pub score_model: Box<dyn RegressionModel>,
    /// `tr((g - g_mu)(g - g_mu)' H^-2) = |H^-1 (g - g_mu)|^2` per pilot unit.
    pub targets: Vec<f64>,
    /// Pilot empirical Hessian at the pilot estimate (row-major).
    pub hessian: Vec<f64>,
    /// Set when the Hessian needed a ridge before inversion.
    pub regularized: bool,
}

impl AOptimalFit {
    /// Scores `sqrt(S(x_i)) >= 0`, proportional to the A-optimal probabilities.
    pub fn scores(&self, x: &Features) -> Vec<f64> {
        self.score_model
            .predict_all(x)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect()
    }
}

/// Fits the A-optimal score model on a labeled pilot with predictions.
///
/// `g` and `g_mu` at each pilot unit are leave-one-out averages of the
/// gradient kernel over the other pilot units, with true labels and with
/// predictions respectively.
pub fn a_optimal_scores(
    pilot_x: &Features,
    pilot_y: &[f64],
    pilot_yhat: &[f64],
    theta_pilot: &[f64],
    learner: LearnerSpec,
) -> Result<AOptimalFit> {
    let (m, p) = (pilot_x.n(), pilot_x.p());
    if pilot_y.len() != m || pilot_yhat.len() != m {
        return Err(Error::arg("pilot labels and predictions must cover every pilot unit"));
    }
    if theta_pilot.len() != p {
        return Err(Error::arg("pilot theta has the wrong dimension"));
    }
    let all: Vec<usize> = (0..m).collect();
    let hessian = empirical_urisk(pilot_x, pilot_y, &all)?
        .eval(theta_pilot)
        .hessian
        .expect("hessian requested");
    let (h_inv, regularized) = regularized_inverse(&hessian)?;
    let g = partner_gradient_means(pilot_x, pilot_y, theta_pilot, &all, &all, None);
    let g_mu = partner_gradient_means(pilot_x, pilot_yhat, theta_pilot, &all, &all, None);
    let targets: Vec<f64> = (0..m)
        .map(|i| {
            let diff = DVector::from_iterator(p, (0..p).map(|q| g[i * p + q] - g_mu[i * p + q]));
            (&h_inv * diff).norm_squared()
        })
        .collect();
    let roots: Vec<f64> = targets.iter().map(|t| t.sqrt()).collect();
    let mut score_model = learner.build();
    score_model.fit(pilot_x, &roots)?;
    Ok(AOptimalFit {
        score_model,
        targets,
        hessian: hessian.transpose().as_slice().to_vec(),
        regularized,
    })
}

/// Plug-in sandwich `4 H^-1 Sigma_g H^-1` for `sqrt(n)(theta_hat - theta*)`.
///
/// `H` is the Hájek IPW Hessian over labeled pairs. `Sigma_g` is the
/// covariance of `phi_i = g_mu_i + (xi_i / pi_i)(g_i - g_mu_i)`, where `g_i`
/// averages the gradient kernel over labeled partners (weights `1/pi`) and
/// `g_mu_i` over all partners with predictions. Returns the matrix row-major
/// and whether the Hessian needed a ridge.
pub fn sandwich_covariance(sample: &ActiveSample, theta_hat: &[f64]) -> Result<(Vec<f64>, bool)> {
    let parts = sample_parts(sample)?;
    let (n, p) = (sample.n(), parts.x.p());
    if theta_hat.len() != p {
        return Err(Error::arg("theta has the wrong dimension"));
    }
    let lab = &parts.labeled;
    if lab.len() < 2 {
        return Err(Error::estimation("sandwich needs at least one labeled pair"));
    }
    let probs = sample.probs();
    let inv: Vec<f64> = probs.iter().map(|p| 1.0 / p).collect();

    let mut h = vec![0.0; p * p];
    let mut wsum = NeumaierSum::default();
    let a: Vec<f64> = parts.x.rows().map(|r| dot(r, theta_hat)).collect();
    let mut d = vec![0.0; p];
    for (k, &i) in lab.iter().enumerate() {
        for &j in &lab[k + 1..] {
            let w = inv[i] * inv[j];
            wsum.add(w);
            let s = pair_sign(parts.y[i] - parts.y[j]);
            if s == 0.0 {
                continue;
            }
            let (_, curv) = logistic_slope_curv(s * (a[i] - a[j]));
            let (xi, xj) = (parts.x.row(i), parts.x.row(j));
            for q in 0..p {
                d[q] = xi[q] - xj[q];
            }
            add_outer(&mut h, &d, w * curv);
        }
    }
    let scale = 1.0 / wsum.sum();
    let mut hm = DMatrix::from_row_slice(p, p, &h) * scale;
    for r in 0..p {
        for c in 0..r {
            hm[(r, c)] = hm[(c, r)];
        }
    }
    let (h_inv, regularized) = regularized_inverse(&hm)?;

    let all: Vec<usize> = (0..n).collect();
    let g = partner_gradient_means(parts.x, &parts.y, theta_hat, lab, lab, Some(&inv));
    let g_mu = partner_gradient_means(parts.x, &parts.yhat, theta_hat, &all, &all, None);
    let mut phi = g_mu;
    for (t, &i) in lab.iter().enumerate() {
        for q in 0..p {
            let mu = phi[i * p + q];
            phi[i * p + q] = mu + inv[i] * (g[t * p + q] - mu);
        }
    }
    let phi = DMatrix::from_row_slice(n, p, &phi);
    let mean = phi.row_mean();
    let centered = DMatrix::from_fn(n, p, |i, q| phi[(i, q)] - mean[q]);
    let sigma = centered.transpose() * &centered / n as f64;
    let cov = &h_inv * sigma * &h_inv * 4.0;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((cov.transpose().as_slice().to_vec(), regularized))
}

/// Fitted active U-estimator with its sandwich covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UermResult {
    pub theta_hat: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// `p x p` sandwich covariance of `sqrt(n)(theta_hat - theta*)`.
    pub sandwich_cov: Vec<Vec<f64>>,
    pub n_lab: usize,
    pub expected_labels: f64,
    pub min_prob: f64,
    pub max_prob: f64,
    /// Coefficient of the ridge term included in the optimized risk.
    pub stabilizer: f64,
}

/// Minimizes the stabilized active U-risk from `theta_pilot` and attaches
/// the sandwich covariance at the minimizer.
pub fn minimize_active_risk(sample: &ActiveSample, theta_pilot: &[f64], opts: OptimOptions) -> Result<UermResult> {
    let obj = active_urisk_objective(sample)?.with_stabilizer(STABILIZER);
    let out = minimize(&obj, theta_pilot, opts)?;
    let (cov, _) = sandwich_covariance(sample, &out.theta)?;
    let p = out.theta.len();
    let probs = sample.probs();
    Ok(UermResult {
        sandwich_cov: cov.chunks(p).map(<[f64]>::to_vec).collect(),
        theta_hat: out.theta,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        n_lab: sample.n_lab(),
        expected_labels: probs.iter().sum(),
        min_prob: probs.iter().copied().fold(f64::INFINITY, f64::min),
        max_prob: probs.iter().copied().fold(0.0, f64::max),
        stabilizer: STABILIZER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::LabelValue;

    fn features(rows: &[&[f64]]) -> Features {
        Features::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn loss_at_zero_and_ties() {
        let l = pairwise_logistic_loss(&[0.0, 0.0], &[1.0, 2.0], 3.0, &[0.5, -1.0], 1.0);
        assert!((l.value - LN_2).abs() < 1e-15);
        assert_eq!(l.gradient, vec![-0.25, -1.5]);
        let l = pairwise_logistic_loss(&[0.4, 0.1], &[1.0, 2.0], 1.0, &[0.5, -1.0], 1.0);
        assert_eq!(l.value, LN_2);
        assert_eq!(l.gradient, vec![0.0, 0.0]);
    }

    #[test]
    fn loss_tails_are_finite() {
        let l = pairwise_logistic_loss(&[100.0], &[1.0], 1.0, &[0.0], 0.0);
        assert!(l.value > 0.0 && l.value < 1e-40);
        let l = pairwise_logistic_loss(&[-100.0], &[1.0], 1.0, &[0.0], 0.0);
        assert!((l.value - 100.0).abs() < 1e-12);
        assert!((l.gradient[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_pair_sums() {
        let x = features(&[&[0.1, 1.0], &[-0.5, 0.3], &[1.2, -0.7], &[0.0, 0.4]]);
        let y = [0.3, 1.1, -0.2, 1.1];
        let theta = [0.7, -0.4];
        let obj = empirical_urisk(&x, &y, &[0, 1, 2, 3]).unwrap();
        let ev = obj.eval(&theta);
        let mut value = 0.0;
        let mut grad = [0.0; 2];
        let mut hess = DMatrix::zeros(2, 2);
        for i in 0..4 {
            for j in i + 1..4 {
                let l = pairwise_logistic_loss(&theta, x.row(i), y[i], x.row(j), y[j]);
                value += l.value / 6.0;
                grad[0] += l.gradient[0] / 6.0;
                grad[1] += l.gradient[1] / 6.0;
                hess += l.hessian / 6.0;
            }
        }
        assert!((ev.value - value).abs() < 1e-14);
        assert!((ev.gradient[0] - grad[0]).abs() < 1e-14);
        assert!((ev.gradient[1] - grad[1]).abs() < 1e-14);
        assert!((ev.hessian.unwrap() - hess).abs().max() < 1e-14);
    }

    #[test]
    fn warm_start_converges_immediately() {
        let x = features(&[&[0.1, 1.0], &[-0.5, 0.3], &[1.2, -0.7], &[0.0, 0.4], &[0.9, 0.9]]);
        let y = [0.3, 1.1, -0.2, 0.5, 0.0];
        let idx = [0, 1, 2, 3, 4];
        let first = minimize_empirical_urisk(&x, &y, &idx, None, OptimOptions::default()).unwrap();
        assert!(first.grad_norm <= 1e-8);
        let again = minimize_empirical_urisk(&x, &y, &idx, Some(&first.theta), OptimOptions::default()).unwrap();
        assert!(again.iterations <= 2);
    }

    #[test]
    fn separable_data_have_a_finite_minimizer() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.25]).collect();
        let x = Features::from_rows(&xs).unwrap();
        let y: Vec<f64> = xs.iter().map(|r| r[0]).collect();
        let idx: Vec<usize> = (0..8).collect();
        let out = minimize_empirical_urisk(&x, &y, &idx, None, OptimOptions::default()).unwrap();
        assert!(out.theta[0] > 1.0 && out.theta[0].is_finite());
        assert!(out.grad_norm <= 1e-8);
    }

    fn small_sample(probs: Vec<f64>, uniforms: Vec<f64>, y: &[f64], yhat: &[f64], x: Features) -> ActiveSample {
        let y = y.to_vec();
        ActiveSample::draw(probs, uniforms, 0.0, |i| LabelValue::Scalar(y[i]))
            .unwrap()
            .with_predictions(yhat.iter().map(|&v| LabelValue::Scalar(v)).collect())
            .unwrap()
            .with_covariates(x)
            .unwrap()
    }

    #[test]
    fn active_risk_reductions() {
        let x = features(&[&[0.1, 1.0], &[-0.5, 0.3], &[1.2, -0.7], &[0.0, 0.4], &[0.9, 0.9]]);
        let y = [0.3, 1.1, -0.2, 0.5, 0.0];
        let yhat = [0.1, 0.2, 0.3, 0.6, -0.1];
        let idx = [0, 1, 2, 3, 4];
        let full = small_sample(vec![1.0; 5], vec![0.5; 5], &y, &yhat, x.clone());
        let emp = empirical_urisk(&x, &y, &idx).unwrap();
        for k in 0..10 {
            let theta = [k as f64 * 0.3 - 1.5, 0.8 - 0.2 * k as f64];
            let (v, _) = active_u_risk(&theta, &full).unwrap();
            assert!((v - emp.value(&theta)).abs() < 1e-12);
        }
        let perfect = small_sample(vec![0.6; 5], vec![0.1, 0.9, 0.2, 0.3, 0.7], &y, &y, x.clone());
        let theta = [0.4, -0.9];
        let (v, g) = active_u_risk(&theta, &perfect).unwrap();
        let (ve, ge) = emp.value_and_gradient(&theta);
        assert!((v - ve).abs() < 1e-15);
        assert!((g[0] - ge[0]).abs() < 1e-15 && (g[1] - ge[1]).abs() < 1e-15);
    }

    #[test]
    fn active_risk_needs_a_labeled_pair() {
        let x = features(&[&[0.0], &[1.0], &[2.0]]);
        let s = small_sample(vec![0.5; 3], vec![0.1, 0.9, 0.9], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], x);
        assert!(matches!(active_u_risk(&[0.0], &s), Err(Error::Estimation(_))));
    }

    #[test]
    fn perfect_predictions_give_zero_targets() {
        let x = features(&[&[0.1], &[-0.5], &[1.2], &[0.0], &[0.9], &[0.4]]);
        let y = [0.3, -1.1, 1.0, 0.5, 0.6, 0.0];
        let fit = a_optimal_scores(&x, &y, &y, &[0.8], LearnerSpec::Knn { k: 2 }).unwrap();
        assert!(fit.targets.iter().all(|&t| t == 0.0));
        assert!(fit.scores(&x).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn sandwich_is_symmetric() {
        let x = features(&[
            &[0.1, 1.0],
            &[-0.5, 0.3],
            &[1.2, -0.7],
            &[0.0, 0.4],
            &[0.9, 0.9],
            &[-1.0, 0.2],
        ]);
        let y = [0.3, 1.1, -0.2, 0.5, 0.0, -0.4];
        let yhat = [0.1, 0.2, 0.3, 0.6, -0.1, -0.3];
        let s = small_sample(vec![0.7; 6], vec![0.1, 0.2, 0.9, 0.3, 0.5, 0.8], &y, &yhat, x);
        let (cov, _) = sandwich_covariance(&s, &[0.3, 0.2]).unwrap();
        assert_eq!(cov[1], cov[2]);
        assert!(cov[0] >= 0.0 && cov[3] >= 0.0);
    }
}
