//! Per-(method, budget) summaries, effective sample sizes and paired gaps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean, sample_variance};

/// One estimate from one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: String,
    pub budget: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `ci_low <= target <= ci_high`.
    pub covered: bool,
    pub n_lab: usize,
    pub sigma2_hat: f64,
    /// The value the interval is checked against.
    pub target: f64,
    pub wall_time_ms: f64,
}

/// Aggregates over the valid trials of one (method, budget) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub budget: f64,
    pub trials: usize,
    /// Trials dropped because the estimator could not be formed.
    pub excluded: usize,
    pub mean_target: f64,
    pub mean_estimate: f64,
    pub mc_variance: f64,
    pub mse: f64,
    pub coverage: f64,
    pub mean_ci_width: f64,
    pub mean_sigma2_hat: f64,
    pub mean_n_lab: f64,
    pub n_eff: Option<f64>,
    pub n_eff_sd: Option<f64>,
}

/// `Var_classical(n_b) = a + c / n_b`, fitted by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeffFit {
    pub a: f64,
    pub c: f64,
    pub max_budget: f64,
}

/// Least-squares fit of `a + c / b` through `(budgets, variances)`.
pub fn fit_classical_curve(budgets: &[f64], variances: &[f64]) -> Result<NeffFit> {
    if budgets.len() != variances.len() || budgets.len() < 3 {
        return Err(Error::arg("the classical variance curve needs at least 3 budgets"));
    }
    let xs: Vec<f64> = budgets.iter().map(|b| 1.0 / b).collect();
    let (mx, my) = (mean(&xs), mean(variances));
    let sxy: f64 = xs.iter().zip(variances).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let c = sxy / sxx;
    if !(c > 0.0) {
        return Err(Error::estimation(format!(
            "classical variance does not decrease with the budget (slope {c:e})"
        )));
    }
    Ok(NeffFit {
        a: my - c * mx,
        c,
        max_budget: budgets.iter().copied().fold(0.0, f64::max),
    })
}

impl NeffFit {
    fn cap(&self) -> f64 {
        10.0 * self.max_budget
    }

    /// Budget at which the fitted classical variance equals `variance`,
    /// clipped to `(0, 10 * max budget]`.
    pub fn n_eff(&self, variance: f64) -> f64 {
        if variance <= self.a {
            return self.cap();
        }
        (self.c / (variance - self.a)).min(self.cap())
    }

    /// `d n_eff / d variance`, zero where the clip is active.
    fn slope(&self, variance: f64) -> f64 {
        if variance <= self.a || self.c / (variance - self.a) >= self.cap() {
            return 0.0;
        }
        -self.c / ((variance - self.a) * (variance - self.a))
    }
}

/// `n_eff` for a method's variance at a budget (see [`NeffFit::n_eff`]).
pub fn effective_sample_size(variance: f64, fit: &NeffFit) -> f64 {
    fit.n_eff(variance)
}

fn influence_variance(xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).collect()
}

fn se_of_mean(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// A difference between two methods with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedGap {
    pub gap: f64,
    pub se: f64,
}

impl PairedGap {
    /// `gap / se`; infinite when the gap is positive with zero error.
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            self.gap / self.se
        } else if self.gap > 0.0 {
            f64::INFINITY
        } else if self.gap < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }
}

fn check_paired(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::arg("paired comparisons need equal-length series of >= 2 trials"));
    }
    Ok(())
}

/// `Var(b) - Var(a)` from trial-aligned estimates, with the standard error
/// of the difference of the two sample variances.
pub fn paired_variance_gap(a: &[f64], b: &[f64]) -> Result<PairedGap> {
    check_paired(a, b)?;
    let (ia, ib) = (influence_variance(a), influence_variance(b));
    let d: Vec<f64> = ib.iter().zip(&ia).map(|(x, y)| x - y).collect();
    Ok(PairedGap {
        gap: sample_variance(b) - sample_variance(a),
        se: se_of_mean(&d),
    })
}

/// `MSE(b) - MSE(a)` around per-trial targets.
pub fn paired_mse_gap(a: &[f64], b: &[f64], targets: &[f64]) -> Result<PairedGap> {
    check_paired(a, b)?;
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .zip(targets)
        .map(|((x, y), t)| (y - t) * (y - t) - (x - t) * (x - t))
        .collect();
    Ok(PairedGap {
        gap: mean(&d),
        se: se_of_mean(&d),
    })
}

/// `n_eff(a) - n_eff(b)` with a delta-method standard error over the paired
/// variance estimates (the classical curve is held fixed).
pub fn paired_neff_gap(fit: &NeffFit, a: &[f64], b: &[f64]) -> Result<PairedGap> {
    check_paired(a, b)?;
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let (sa, sb) = (fit.slope(va), fit.slope(vb));
    let (ia, ib) = (influence_variance(a), influence_variance(b));
    let lin: Vec<f64> = ia.iter().zip(&ib).map(|(x, y)| sa * x - sb * y).collect();
    Ok(PairedGap {
        gap: fit.n_eff(va) - fit.n_eff(vb),
        se: se_of_mean(&lin),
    })
}

/// Summaries per (method, budget) in first-seen method order and increasing
/// budget. `excluded` lists `(method, budget)` of dropped trials. When
/// `classical` is measured at 3 or more budgets, every cell gets an `n_eff`
/// with a delta-method SD.
pub fn summarize(records: &[TrialRecord], excluded: &[(String, f64)], classical: &str) -> Vec<MethodSummary> {
    let mut methods: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, u64), Vec<&TrialRecord>> = BTreeMap::new();
    let method_pos = |methods: &mut Vec<String>, m: &str| match methods.iter().position(|x| x == m) {
        Some(i) => i,
        None => {
            methods.push(m.to_string());
            methods.len() - 1
        }
    };
    for r in records {
        let pos = method_pos(&mut methods, &r.method);
        cells.entry((pos, r.budget.to_bits())).or_default().push(r);
    }
    let mut dropped: BTreeMap<(usize, u64), usize> = BTreeMap::new();
    for (m, b) in excluded {
        let pos = method_pos(&mut methods, m);
        *dropped.entry((pos, b.to_bits())).or_default() += 1;
        cells.entry((pos, b.to_bits())).or_default();
    }

    let mut out: Vec<MethodSummary> = cells
        .iter()
        .map(|(&(pos, bits), rs)| {
            let est: Vec<f64> = rs.iter().map(|r| r.estimate).collect();
            let t = rs.len() as f64;
            let avg = |f: &dyn Fn(&TrialRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / t;
            MethodSummary {
                method: methods[pos].clone(),
                budget: f64::from_bits(bits),
                trials: rs.len(),
                excluded: dropped.get(&(pos, bits)).copied().unwrap_or(0),
                mean_target: avg(&|r| r.target),
                mean_estimate: avg(&|r| r.estimate),
                mc_variance: sample_variance(&est),
                mse: avg(&|r| (r.estimate - r.target) * (r.estimate - r.target)),
                coverage: avg(&|r| if r.covered { 1.0 } else { 0.0 }),
                mean_ci_width: avg(&|r| r.ci_high - r.ci_low),
                mean_sigma2_hat: avg(&|r| r.sigma2_hat),
                mean_n_lab: avg(&|r| r.n_lab as f64),
                n_eff: None,
                n_eff_sd: None,
            }
        })
        .collect();
    out.sort_by(|x, y| {
        let px = methods.iter().position(|m| *m == x.method);
        let py = methods.iter().position(|m| *m == y.method);
        px.cmp(&py).then(x.budget.total_cmp(&y.budget))
    });

    let curve: Vec<(f64, f64)> = out
        .iter()
        .filter(|s| s.method == classical && s.trials >= 2)
        .map(|s| (s.budget, s.mc_variance))
        .collect();
    let (bs, vs): (Vec<f64>, Vec<f64>) = curve.into_iter().unzip();
    if let Ok(fit) = fit_classical_curve(&bs, &vs) {
        for s in out.iter_mut().filter(|s| s.trials >= 2) {
            let var_se = {
                let cell: Vec<f64> = records
                    .iter()
                    .filter(|r| r.method == s.method && r.budget == s.budget)
                    .map(|r| r.estimate)
                    .collect();
                se_of_mean(&influence_variance(&cell))
            };
            s.n_eff = Some(fit.n_eff(s.mc_variance));
            s.n_eff_sd = Some(fit.slope(s.mc_variance).abs() * var_se);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reciprocal_law() {
        let budgets = [100.0, 200.0, 400.0];
        let vars: Vec<f64> = budgets.iter().map(|b| 5.0 / b).collect();
        let fit = fit_classical_curve(&budgets, &vars).unwrap();
        assert!(fit.a.abs() < 1e-15);
        assert!((fit.c - 5.0).abs() < 1e-12);
        assert!((effective_sample_size(5.0 / 200.0 / 2.0, &fit) - 400.0).abs() < 1e-9);
        for b in budgets {
            assert!((fit.n_eff(5.0 / b) - b).abs() < 1e-9);
        }
    }

    #[test]
    fn increasing_curve_is_rejected() {
        assert!(matches!(
            fit_classical_curve(&[100.0, 200.0, 400.0], &[1.0, 2.0, 3.0]),
            Err(Error::Estimation(_))
        ));
        assert!(fit_classical_curve(&[100.0, 200.0], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn clipping() {
        let fit = NeffFit {
            a: 0.01,
            c: 1.0,
            max_budget: 100.0,
        };
        assert_eq!(fit.n_eff(0.005), 1000.0);
        assert_eq!(fit.n_eff(0.0101), 1000.0);
        assert!((fit.n_eff(0.02) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn paired_gaps() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        let g = paired_variance_gap(&a, &b).unwrap();
        assert!((g.gap - 3.0 * sample_variance(&a)).abs() < 1e-12);
        let m = paired_mse_gap(&a, &a, &[0.0; 4]).unwrap();
        assert_eq!((m.gap, m.se), (0.0, 0.0));
    }

    fn rec(method: &str, budget: f64, estimate: f64, covered: bool) -> TrialRecord {
        TrialRecord {
            trial: 0,
            method: method.into(),
            budget,
            estimate,
            ci_low: estimate - 1.0,
            ci_high: estimate + 1.0,
            covered,
            n_lab: 3,
            sigma2_hat: 1.0,
            target: 0.0,
            wall_time_ms: 0.0,
        }
    }

    #[test]
    fn summaries_are_ordered_and_counted() {
        let records = vec![
            rec("b", 20.0, 1.0, true),
            rec("a", 10.0, 2.0, false),
            rec("b", 10.0, 3.0, true),
            rec("b", 10.0, 5.0, false),
        ];
        let s = summarize(&records, &[("a".into(), 10.0)], "classical");
        let keys: Vec<(&str, f64)> = s.iter().map(|s| (s.method.as_str(), s.budget)).collect();
        assert_eq!(keys, vec![("b", 10.0), ("b", 20.0), ("a", 10.0)]);
        assert_eq!(s[0].coverage, 0.5);
        assert_eq!(s[0].mean_estimate, 4.0);
        assert_eq!(s[0].mc_variance, 2.0);
        assert_eq!(s[0].mse, 17.0);
        assert_eq!(s[2].excluded, 1);
        assert!(s.iter().all(|s| (0.0..=1.0).contains(&s.coverage)));
    }
}
