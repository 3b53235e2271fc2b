//! Horvitz–Thompson variance estimation and normal confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::ActiveSample;
use crate::numeric::NeumaierSum;

/// Default two-sided level: 90% intervals.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Components of `sigma2_hat = var1 + var2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBreakdown {
    /// `r^2 (m2_hat - m1_hat^2)`, clamped at 0.
    pub var1: f64,
    /// `(r^2 / n) sum (xi/pi) (h1 - h1_mu - c)^2 (1/pi - 1)`.
    pub var2: f64,
    pub sigma2: f64,
    pub m1_hat: f64,
    pub m2_hat: f64,
    /// Set when the HT variance of `h1` came out negative and was clamped.
    pub clamped: bool,
}

/// How the residual `h1 - h1_mu` is centered inside `var2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// Uncentered residuals, matching the unnormalized estimator.
    None,
    /// Residuals centered at their Hájek mean, matching estimators that
    /// divide the correction by `N_hat`.
    Hajek,
}

/// HT moments `m_k = (1/n) sum (xi_i / pi_i) h1_i^k` for `k = 1, 2`.
///
/// `h1` holds one value per unit; entries at unlabeled units are ignored.
pub fn ht_moments(sample: &ActiveSample, h1: &[f64]) -> Result<(f64, f64)> {
    if h1.len() != sample.n() {
        return Err(Error::arg("projection values must cover every unit"));
    }
    let labeled = sample.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::estimation("no labeled units for HT moments"));
    }
    let n = sample.n() as f64;
    let mut m1 = NeumaierSum::default();
    let mut m2 = NeumaierSum::default();
    for &i in &labeled {
        let w = 1.0 / sample.probs()[i];
        m1.add(w * h1[i]);
        m2.add(w * h1[i] * h1[i]);
    }
    Ok((m1.sum() / n, m2.sum() / n))
}

/// Plug-in variance estimate `sigma2_hat = var1 + var2` for `sqrt(n)`-scaled
/// AIPW-type U-statistics of degree `r`.
///
/// `h1` is `h1_hat(Y_i)` (read at labeled units only) and `h1_mu` is
/// `h1_hat_mu(Yhat_i)` for every unit.
pub fn variance_estimate(
    sample: &ActiveSample,
    h1: &[f64],
    h1_mu: &[f64],
    r: usize,
    centering: Centering,
) -> Result<VarianceBreakdown> {
    if h1_mu.len() != sample.n() {
        return Err(Error::arg("prediction projections must cover every unit"));
    }
    let (m1_hat, m2_hat) = ht_moments(sample, h1)?;
    let r2 = (r * r) as f64;
    let ht_var = m2_hat - m1_hat * m1_hat;
    let clamped = ht_var < 0.0;
    if clamped {
        log::warn!("HT variance of h1 is negative ({ht_var:e}); clamped to 0");
    }
    let var1 = r2 * ht_var.max(0.0);

    let labeled = sample.labeled_indices();
    let probs = sample.probs();
    let offset = match centering {
        Centering::None => 0.0,
        Centering::Hajek => {
            let mut num = NeumaierSum::default();
            let mut den = NeumaierSum::default();
            for &i in &labeled {
                num.add((h1[i] - h1_mu[i]) / probs[i]);
                den.add(1.0 / probs[i]);
            }
            num.sum() / den.sum()
        }
    };
    let mut acc = NeumaierSum::default();
    for &i in &labeled {
        let pi = probs[i];
        let d = h1[i] - h1_mu[i] - offset;
        acc.add(d * d * (1.0 / pi - 1.0) / pi);
    }
    let var2 = r2 * acc.sum() / sample.n() as f64;
    Ok(VarianceBreakdown {
        var1,
        var2,
        sigma2: var1 + var2,
        m1_hat,
        m2_hat,
        clamped,
    })
}

/// Standard normal quantile `z_p`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::arg(format!("quantile level must lie in (0, 1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// `theta_hat +/- z_{1 - alpha/2} sigma_hat / sqrt(n)`.
pub fn confidence_interval(theta_hat: f64, sigma2_hat: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(sigma2_hat >= 0.0) {
        return Err(Error::arg(format!("variance must be >= 0, got {sigma2_hat}")));
    }
    if n == 0 {
        return Err(Error::arg("interval needs n >= 1"));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let half = z * sigma2_hat.sqrt() / (n as f64).sqrt();
    Ok((theta_hat - half, theta_hat + half))
}
