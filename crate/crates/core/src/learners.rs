//! Regression learners used for the prediction model, the uncertainty score
//! and the A-optimality score.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Features;
use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;

pub trait RegressionModel: Send + Sync {
    fn fit(&mut self, x: &Features, y: &[f64]) -> Result<()>;

    fn predict(&self, row: &[f64]) -> f64;

    fn predict_all(&self, x: &Features) -> Vec<f64> {
        x.rows().map(|row| self.predict(row)).collect()
    }
}

/// Learner choice plus hyperparameters, as read from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerSpec {
    /// `k = 0` means `ceil(sqrt(m))` at fit time.
    Knn {
        k: usize,
    },
    Ridge {
        lambda: f64,
    },
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::Knn { k: 0 }
    }
}

impl LearnerSpec {
    pub fn build(&self) -> Box<dyn RegressionModel> {
        match *self {
            LearnerSpec::Knn { k } => Box::new(knn_regressor(k)),
            LearnerSpec::Ridge { lambda } => Box::new(RidgeRegressor {
                lambda: lambda.max(0.0),
                intercept: 0.0,
                coef: Vec::new(),
            }),
        }
    }

    /// Parses `knn`, `knn:K`, `ridge` or `ridge:LAMBDA`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let bad = || Error::arg(format!("invalid learner '{s}'"));
        match name {
            "knn" => Ok(LearnerSpec::Knn {
                k: arg.map(str::parse).transpose().map_err(|_| bad())?.unwrap_or(0),
            }),
            "ridge" => {
                let lambda: f64 = arg
                    .map(str::parse)
                    .transpose()
                    .map_err(|_| bad())?
                    .unwrap_or(DEFAULT_RIDGE_LAMBDA);
                ridge_regressor(lambda)?;
                Ok(LearnerSpec::Ridge { lambda })
            }
            _ => Err(bad()),
        }
    }
}

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-3;

/// k-nearest-neighbour regression under Euclidean distance.
///
/// Neighbours are ordered by `(distance, training index)`, so ties go to the
/// earlier training row.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    k_requested: usize,
    k: usize,
    train: Option<Features>,
    targets: Vec<f64>,
}

pub fn knn_regressor(k: usize) -> KnnRegressor {
    KnnRegressor {
        k_requested: k,
        k: k.max(1),
        train: None,
        targets: Vec::new(),
    }
}

impl KnnRegressor {
    pub fn k(&self) -> usize {
        self.k
    }
}

impl RegressionModel for KnnRegressor {
    fn fit(&mut self, x: &Features, y: &[f64]) -> Result<()> {
        let m = x.n();
        if m == 0 {
            return Err(Error::arg("cannot fit a regressor on zero rows"));
        }
        if y.len() != m {
            return Err(Error::arg("feature rows and targets differ in length"));
        }
        self.k = if self.k_requested == 0 {
            ((m as f64).sqrt().ceil() as usize).max(1)
        } else {
            self.k_requested
        }
        .min(m);
        self.train = Some(x.clone());
        self.targets = y.to_vec();
        Ok(())
    }

    fn predict(&self, row: &[f64]) -> f64 {
        let train = self.train.as_ref().expect("predict called before fit");
        let mut dist: Vec<(f64, usize)> = train
            .rows()
            .enumerate()
            .map(|(i, t)| {
                let d: f64 = t.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = self.k;
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_dist);
            dist.truncate(k);
        }
        dist.sort_unstable_by(by_dist);
        let mut acc = NeumaierSum::default();
        for &(_, i) in &dist {
            acc.add(self.targets[i]);
        }
        acc.sum() / k as f64
    }
}

/// Least squares with an intercept and an L2 penalty on the slopes, solved
/// by QR on the augmented system `[X_c; sqrt(lambda) I] beta = [y_c; 0]`.
#[derive(Debug, Clone)]
pub struct RidgeRegressor {
    lambda: f64,
    intercept: f64,
    coef: Vec<f64>,
}

pub fn ridge_regressor(lambda: f64) -> Result<RidgeRegressor> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::arg(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    Ok(RidgeRegressor {
        lambda,
        intercept: 0.0,
        coef: Vec::new(),
    })
}

impl RidgeRegressor {
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }
}

impl RegressionModel for RidgeRegressor {
    fn fit(&mut self, x: &Features, y: &[f64]) -> Result<()> {
        let (m, p) = (x.n(), x.p());
        if m == 0 {
            return Err(Error::arg("cannot fit a regressor on zero rows"));
        }
        if y.len() != m {
            return Err(Error::arg("feature rows and targets differ in length"));
        }
        let y_mean = NeumaierSum::from_iter(y.iter().copied()).sum() / m as f64;
        let x_mean: Vec<f64> = (0..p)
            .map(|j| NeumaierSum::from_iter(x.rows().map(|r| r[j])).sum() / m as f64)
            .collect();
        if p == 0 {
            self.intercept = y_mean;
            self.coef.clear();
            return Ok(());
        }
        let rows = m + p;
        let a = DMatrix::from_fn(rows, p, |i, j| {
            if i < m {
                x.row(i)[j] - x_mean[j]
            } else if i - m == j {
                self.lambda.sqrt()
            } else {
                0.0
            }
        });
        let b = DVector::from_fn(rows, |i, _| if i < m { y[i] - y_mean } else { 0.0 });
        let qr = a.qr();
        let r = qr.r();
        let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
        if (0..p).any(|j| r[(j, j)].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE)) || scale == 0.0 {
            return Err(Error::estimation("ridge system is singular; use a positive penalty"));
        }
        let qtb = qr.q().transpose() * b;
        let beta = r
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::estimation("ridge triangular solve failed"))?;
        self.coef = beta.iter().copied().collect();
        self.intercept = y_mean - self.coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
        Ok(())
    }

    fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }
}
