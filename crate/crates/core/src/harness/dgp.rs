//! Synthetic data-generating processes and their population reference values.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{label_values, Dataset, Features};
use crate::error::{Error, Result};
use crate::estimators::u_statistic;
use crate::hoeffding::ProjectionEvaluator;
use crate::kernels::{builtin_kernel, FastPath, KernelSpec, LabelShape, LabelValue};
use crate::numeric::NeumaierSum;

/// Size of the cached reference sample behind population targets.
pub const REFERENCE_SIZE: usize = 200_000;

const REFERENCE_SEED: u64 = 0x005e_ed0f_7e57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpKind {
    /// `X ~ N(0, 0.3 I + 0.7 11')`, `Y = f(X) + N(0, sigma^2)` with a fixed
    /// nonlinear `f` of the first four covariates.
    AppendixC1,
    /// `X ~ N(0, I)`, `Y = X' theta* + N(0, sigma^2)` with `theta* = 1/sqrt(p)`.
    LinearRanking,
}

impl DgpKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "appendix-c1" => Ok(DgpKind::AppendixC1),
            "linear-ranking" => Ok(DgpKind::LinearRanking),
            _ => Err(Error::arg(format!("unknown data-generating process '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DgpKind::AppendixC1 => "appendix-c1",
            DgpKind::LinearRanking => "linear-ranking",
        }
    }

    /// Noise scale used when none is given.
    pub fn default_sigma(self) -> f64 {
        match self {
            DgpKind::AppendixC1 => 0.3,
            DgpKind::LinearRanking => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub p: usize,
    pub n: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, p: usize, seed: u64) -> Self {
        DgpSpec {
            kind,
            p,
            n,
            noise_sigma: kind.default_sigma(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            DgpKind::AppendixC1 if self.p < 4 => Err(Error::arg(format!("appendix-c1 needs p >= 4, got {}", self.p))),
            DgpKind::LinearRanking if self.p < 1 => Err(Error::arg("linear-ranking needs p >= 1")),
            _ if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() => Err(Error::arg(format!(
                "noise scale must be >= 0, got {}",
                self.noise_sigma
            ))),
            _ => Ok(()),
        }
    }
}

/// `theta*` of the linear-ranking model: every coordinate `1/sqrt(p)`.
pub fn linear_theta_star(p: usize) -> Vec<f64> {
    vec![1.0 / (p as f64).sqrt(); p]
}

/// `E[Y | X = row]`.
pub fn conditional_mean(kind: DgpKind, row: &[f64]) -> f64 {
    match kind {
        DgpKind::AppendixC1 => {
            let (x1, x2, x3, x4) = (row[0], row[1], row[2], row[3]);
            1.2 * x1.sin() + 0.8 * x2.cos() + 0.6 * x1 * x2 + 0.5 * x3 * x3 + 0.7 * x4.tanh()
        }
        DgpKind::LinearRanking => {
            let t = 1.0 / (row.len() as f64).sqrt();
            row.iter().map(|x| x * t).sum()
        }
    }
}

/// Lower Cholesky factor of `0.3 I + 0.7 11'`.
fn equicorrelated_factor(p: usize) -> DMatrix<f64> {
    let sigma = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.7 });
    sigma
        .cholesky()
        .expect("equicorrelated covariance is positive definite")
        .l()
}

/// Draws a labeled dataset; identical specs give bit-identical data.
pub fn generate_dgp(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let factor = match spec.kind {
        DgpKind::AppendixC1 => Some(equicorrelated_factor(p)),
        DgpKind::LinearRanking => None,
    };
    let mut data = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    let mut z = vec![0.0; p];
    let mut row = vec![0.0; p];
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        match &factor {
            Some(l) => {
                for i in 0..p {
                    row[i] = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
                }
            }
            None => row.copy_from_slice(&z),
        }
        let eps: f64 = rng.sample(StandardNormal);
        y.push(conditional_mean(spec.kind, &row) + spec.noise_sigma * eps);
        data.extend_from_slice(&row);
    }
    Ok(Dataset {
        x: Features::new(n, p, data)?,
        y: Some(y),
        yhat: None,
    })
}

type ReferenceKey = (DgpKind, usize, u64, String);

fn reference_cache() -> &'static Mutex<HashMap<ReferenceKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<ReferenceKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Population target `theta*_ref`: the full-label U-statistic of a
/// [`REFERENCE_SIZE`]-point sample, computed once per `(kind, p, sigma, kernel)`
/// and cached for the life of the process.
pub fn reference_value(kind: DgpKind, p: usize, noise_sigma: f64, kernel: &KernelSpec) -> Result<f64> {
    let key = (kind, p, noise_sigma.to_bits(), kernel.name().to_string());
    if let Some(&v) = reference_cache().lock().expect("cache poisoned").get(&key) {
        return Ok(v);
    }
    if kernel.degree() > 1 && kernel.fast_path() == FastPath::None {
        return Err(Error::arg(format!(
            "kernel '{}' has no fast path; a {REFERENCE_SIZE}-point reference is out of reach",
            kernel.name()
        )));
    }
    let spec = DgpSpec {
        kind,
        p,
        n: REFERENCE_SIZE,
        noise_sigma,
        seed: REFERENCE_SEED,
    };
    let data = generate_dgp(&spec)?;
    let values = label_values(kernel.label_shape(), data.labels()?, &data.x);
    let v = u_statistic(&values, kernel)?;
    reference_cache().lock().expect("cache poisoned").insert(key, v);
    Ok(v)
}

/// Same as [`reference_value`] for a built-in kernel name.
pub fn reference_value_named(kind: DgpKind, p: usize, noise_sigma: f64, kernel: &str) -> Result<f64> {
    reference_value(kind, p, noise_sigma, &builtin_kernel(kernel)?)
}

/// Optimal sampling scores `s(x_i) = E[(h1(Y) - h1_mu(Yhat))^2 | X = x_i]`,
/// computed by simulating `draws` noise values at each fixed `x_i`.
///
/// Only valid for scalar-label kernels on DGPs with additive Gaussian noise,
/// where `Y | X = x` is `N(E[Y | x], sigma^2)` and `Yhat` is fixed given `x`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_scores(
    kind: DgpKind,
    noise_sigma: f64,
    x: &Features,
    yhat: &[f64],
    h1: &ProjectionEvaluator,
    h1_mu: &ProjectionEvaluator,
    shape: LabelShape,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if shape != LabelShape::Scalar {
        return Err(Error::arg("oracle scores need a scalar-label kernel"));
    }
    if yhat.len() != x.n() || draws == 0 {
        return Err(Error::arg("oracle scores need one prediction per row and draws >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(x.rows()
        .zip(yhat)
        .map(|(row, &yh)| {
            let mean = conditional_mean(kind, row);
            let pred = h1_mu.eval(LabelValue::Scalar(yh));
            let mut acc = NeumaierSum::default();
            for _ in 0..draws {
                let eps: f64 = rng.sample(StandardNormal);
                let d = h1.eval(LabelValue::Scalar(mean + noise_sigma * eps)) - pred;
                acc.add(d * d);
            }
            acc.sum() / draws as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = DgpSpec::new(DgpKind::AppendixC1, 50, 5, 9);
        assert_eq!(generate_dgp(&spec).unwrap(), generate_dgp(&spec).unwrap());
        let other = DgpSpec { seed: 10, ..spec };
        assert_ne!(generate_dgp(&spec).unwrap(), generate_dgp(&other).unwrap());
    }

    #[test]
    fn nonlinear_dgp_needs_four_covariates() {
        assert!(generate_dgp(&DgpSpec::new(DgpKind::AppendixC1, 10, 3, 0)).is_err());
    }

    #[test]
    fn noiseless_linear_ranking_is_exact() {
        let spec = DgpSpec {
            noise_sigma: 0.0,
            ..DgpSpec::new(DgpKind::LinearRanking, 20, 3, 1)
        };
        let d = generate_dgp(&spec).unwrap();
        let theta = linear_theta_star(3);
        for (row, y) in d.x.rows().zip(d.labels().unwrap()) {
            let fit: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            assert!((fit - y).abs() < 1e-15);
        }
        let norm: f64 = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-15);
    }
}
