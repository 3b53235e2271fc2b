//! Pilot estimates of first-order Hoeffding projections.
//!
//! `h1(y) = E[h(y, Y_2, ..., Y_r)]` is estimated by averaging `h(y, tuple)`
//! over every `(r-1)`-subset of a pilot sample. The same construction on
//! model predictions gives `h1_mu`.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{binomial, FastPath, KernelSpec, LabelValue};
use crate::numeric::{sample_variance, NeumaierSum};

/// Pilot points beyond this count are subsampled before building an evaluator.
pub const PILOT_CAP: usize = 2_000;

/// Sample variances of `h1` below this are reported as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

/// Whether the pilot values are true labels or model predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    TrueLabel,
    Prediction,
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    /// Sorted pilot with prefix sums, for `O(log n')` Gini and Wilcoxon queries.
    Sorted {
        sorted: Vec<f64>,
        prefix: Vec<f64>,
    },
    /// Power sums `(n', S1, S2, S3)` for the third-central-moment kernel.
    PowerSums {
        n: f64,
        s1: f64,
        s2: f64,
        s3: f64,
    },
}

/// Evaluates the estimated projection `h1_hat(y)` of a kernel.
#[derive(Debug, Clone)]
pub struct ProjectionEvaluator {
    pilot: Vec<LabelValue>,
    kernel: KernelSpec,
    kind: ProjectionKind,
    cache: Cache,
}

/// Builds `h1_hat` from a pilot set. Pilots larger than [`PILOT_CAP`] are
/// subsampled without replacement using `seed`.
pub fn estimate_h1(
    pilot: &[LabelValue],
    kernel: &KernelSpec,
    kind: ProjectionKind,
    seed: u64,
) -> Result<ProjectionEvaluator> {
    let r = kernel.degree();
    if pilot.len() < r.saturating_sub(1).max(1) {
        return Err(Error::arg(format!(
            "projection of a degree-{r} kernel needs at least {} pilot points, got {}",
            (r - 1).max(1),
            pilot.len()
        )));
    }
    for v in pilot {
        kernel.check_value(v)?;
    }
    let pilot: Vec<LabelValue> = if pilot.len() > PILOT_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample_indices(&mut rng, pilot.len(), PILOT_CAP).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pilot[i]).collect()
    } else {
        pilot.to_vec()
    };
    let cache = match (kernel.fast_path(), r) {
        (FastPath::Gini | FastPath::WilcoxonPair, 2) => {
            let mut sorted: Vec<f64> = pilot.iter().map(|v| v.primary() + 0.0).collect();
            sorted.sort_by(f64::total_cmp);
            let mut prefix = Vec::with_capacity(sorted.len() + 1);
            let mut acc = NeumaierSum::default();
            prefix.push(0.0);
            for &y in &sorted {
                acc.add(y);
                prefix.push(acc.sum());
            }
            Cache::Sorted { sorted, prefix }
        }
        (FastPath::ThirdCentralMoment, 3) => {
            let mut s = [NeumaierSum::default(); 3];
            for v in &pilot {
                let y = v.primary();
                s[0].add(y);
                s[1].add(y * y);
                s[2].add(y * y * y);
            }
            Cache::PowerSums {
                n: pilot.len() as f64,
                s1: s[0].sum(),
                s2: s[1].sum(),
                s3: s[2].sum(),
            }
        }
        _ => Cache::None,
    };
    Ok(ProjectionEvaluator {
        pilot,
        kernel: kernel.clone(),
        kind,
        cache,
    })
}

impl ProjectionEvaluator {
    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    pub fn pilot_len(&self) -> usize {
        self.pilot.len()
    }

    /// `h1_hat(y)`: the average of `h(y, tuple)` over `(r-1)`-subsets of the pilot.
    pub fn eval(&self, y: LabelValue) -> f64 {
        let r = self.kernel.degree();
        if r == 1 {
            return self.kernel.eval_unchecked(&[y]);
        }
        match &self.cache {
            Cache::Sorted { sorted, prefix } => {
                let y = y.primary();
                let m = sorted.len();
                match self.kernel.fast_path() {
                    FastPath::Gini => {
                        let below = sorted.partition_point(|&v| v < y);
                        let s_below = prefix[below];
                        let s_above = prefix[m] - s_below;
                        let above = (m - below) as f64;
                        (y * below as f64 - s_below + s_above - y * above) / m as f64
                    }
                    _ => {
                        let first = sorted.partition_point(|&v| v <= -y);
                        (m - first) as f64 / m as f64
                    }
                }
            }
            Cache::PowerSums { n, s1, s2, s3 } => {
                let y = y.primary();
                let (n, s1, s2, s3) = (*n, *s1, *s2, *s3);
                let pairs = n * (n - 1.0) / 2.0;
                let total = pairs * y * y * y / 3.0 + (n - 1.0) * s3 / 3.0
                    - 0.5 * (y * y * (n - 1.0) * s1 + y * (n - 1.0) * s2 + (s1 * s2 - s3))
                    + y * (s1 * s1 - s2);
                total / pairs
            }
            Cache::None => self.eval_direct(y),
        }
    }

    /// Direct enumeration over `(r-1)`-subsets, ignoring any cache.
    pub fn eval_direct(&self, y: LabelValue) -> f64 {
        let r = self.kernel.degree();
        let m = self.pilot.len();
        let mut acc = NeumaierSum::default();
        match r {
            1 => return self.kernel.eval_unchecked(&[y]),
            2 => {
                for &p in &self.pilot {
                    acc.add(self.kernel.eval_unchecked(&[y, p]));
                }
            }
            _ => {
                for j in 0..m {
                    for k in j + 1..m {
                        acc.add(self.kernel.eval_unchecked(&[y, self.pilot[j], self.pilot[k]]));
                    }
                }
            }
        }
        acc.sum() / binomial(m, r - 1)
    }

    pub fn eval_many(&self, ys: &[LabelValue]) -> Vec<f64> {
        ys.iter().map(|&y| self.eval(y)).collect()
    }
}

/// Sample variance of `h1_hat` over `points`. Values below
/// [`DEGENERACY_THRESHOLD`] indicate a (near-)degenerate kernel; this is
/// logged as a warning and never treated as a failure.
pub fn degeneracy_check(evaluator: &ProjectionEvaluator, points: &[LabelValue]) -> f64 {
    let values = evaluator.eval_many(points);
    let var = sample_variance(&values);
    if var < DEGENERACY_THRESHOLD {
        log::warn!("projection variance {var:e} is below {DEGENERACY_THRESHOLD:e}; the U-statistic looks degenerate");
    }
    var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::builtin_kernel;

    fn scalars(v: &[f64]) -> Vec<LabelValue> {
        v.iter().map(|&y| LabelValue::Scalar(y)).collect()
    }

    #[test]
    fn gini_projection_examples() {
        let gini = builtin_kernel("gini").unwrap();
        let ev = estimate_h1(&scalars(&[1.0, 2.0, 3.0]), &gini, ProjectionKind::TrueLabel, 0).unwrap();
        // (|0-1| + |0-2| + |0-3|) / 3
        assert!((ev.eval(LabelValue::Scalar(0.0)) - 2.0).abs() < 1e-15);
        let ev = estimate_h1(&scalars(&[4.5]), &gini, ProjectionKind::TrueLabel, 0).unwrap();
        assert_eq!(ev.eval(LabelValue::Scalar(4.5)), 0.0);
    }

    #[test]
    fn mean_projection_is_identity() {
        let mean = builtin_kernel("mean").unwrap();
        let ev = estimate_h1(&scalars(&[9.0, -1.0]), &mean, ProjectionKind::Prediction, 0).unwrap();
        for y in [-3.25, 0.0, 17.5] {
            assert_eq!(ev.eval(LabelValue::Scalar(y)), y);
        }
    }

    #[test]
    fn pilot_too_small() {
        let k = builtin_kernel("third-central-moment").unwrap();
        assert!(estimate_h1(&scalars(&[1.0]), &k, ProjectionKind::TrueLabel, 0).is_err());
        assert!(estimate_h1(&scalars(&[1.0, 2.0]), &k, ProjectionKind::TrueLabel, 0).is_ok());
    }

    #[test]
    fn degeneracy_examples() {
        let gini = builtin_kernel("gini").unwrap();
        let ev = estimate_h1(&scalars(&[0.0, 10.0]), &gini, ProjectionKind::TrueLabel, 0).unwrap();
        // h1_hat(0) = h1_hat(10) = 5 by symmetry: degenerate-looking.
        assert_eq!(degeneracy_check(&ev, &scalars(&[0.0, 10.0])), 0.0);

        let pts = scalars(&[0.0, 1.0, 10.0]);
        let ev = estimate_h1(&pts, &gini, ProjectionKind::TrueLabel, 0).unwrap();
        // h1_hat = {11/3, 10/3, 19/3}
        let direct = [11.0 / 3.0, 10.0 / 3.0, 19.0 / 3.0];
        let m = direct.iter().sum::<f64>() / 3.0;
        let var = direct.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 2.0;
        let got = degeneracy_check(&ev, &pts);
        assert!(got > 0.0);
        assert!((got - var).abs() < 1e-12);

        let constant = estimate_h1(
            &scalars(&[2.0; 5]),
            &builtin_kernel("mean").unwrap(),
            ProjectionKind::TrueLabel,
            0,
        )
        .unwrap();
        assert_eq!(degeneracy_check(&constant, &scalars(&[3.0; 4])), 0.0);
    }

    #[test]
    fn large_pilot_is_capped_deterministically() {
        let gini = builtin_kernel("gini").unwrap();
        let pilot: Vec<LabelValue> = (0..5000).map(|i| LabelValue::Scalar((i as f64).sin())).collect();
        let a = estimate_h1(&pilot, &gini, ProjectionKind::TrueLabel, 3).unwrap();
        let b = estimate_h1(&pilot, &gini, ProjectionKind::TrueLabel, 3).unwrap();
        assert_eq!(a.pilot_len(), PILOT_CAP);
        assert_eq!(a.eval(LabelValue::Scalar(0.2)), b.eval(LabelValue::Scalar(0.2)));
    }
}
