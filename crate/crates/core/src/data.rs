//! Row-major covariate matrices and labeled datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{LabelShape, LabelValue};

/// An `n x p` covariate matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::arg(format!(
                "feature buffer has {} entries, expected {n} x {p}",
                data.len()
            )));
        }
        Ok(Features { n, p, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::arg("ragged feature rows"));
        }
        Ok(Features {
            n: rows.len(),
            p,
            data: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size.
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The sub-matrix made of the given rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Features {
        let mut data = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Features {
            n: idx.len(),
            p: self.p,
            data,
        }
    }
}

/// Covariates with optional labels and optional external predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Features,
    pub y: Option<Vec<f64>>,
    pub yhat: Option<Vec<f64>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn labels(&self) -> Result<&[f64]> {
        self.y.as_deref().ok_or_else(|| Error::arg("labels required"))
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            x: self.x.select(idx),
            y: self.y.as_ref().map(pick),
            yhat: self.yhat.as_ref().map(pick),
        }
    }
}

/// Builds the kernel input for unit `i`: a scalar label, or for pair
/// kernels the pair `(y, x_1)` with the first covariate as second coordinate.
#[inline]
pub fn label_value(shape: LabelShape, y: f64, row: &[f64]) -> LabelValue {
    match shape {
        LabelShape::Scalar => LabelValue::Scalar(y),
        LabelShape::Pair => LabelValue::Pair(y, row.first().copied().unwrap_or(0.0)),
    }
}

/// Kernel inputs for every unit given per-unit scalar labels.
pub fn label_values(shape: LabelShape, ys: &[f64], x: &Features) -> Vec<LabelValue> {
    ys.iter()
        .enumerate()
        .map(|(i, &y)| label_value(shape, y, x.row(i)))
        .collect()
}
