//! Symmetric U-statistic kernels and exact fast paths for special pairwise sums.
//!
//! A kernel `h` of degree `r` maps an `r`-tuple of label values to a real.
//! Label values are either scalars or `(a, b)` pairs (Kendall's tau is
//! defined on pairs). Degrees above 3 are rejected: every estimator in this
//! crate enumerates tuples exactly.
//!
//! The fast paths compute full pairwise sums in `O(n log n)`:
//!
//! - Gini: `sum_{i<j} |y_i - y_j| = sum_j y_(j) (2j - n - 1)` over the sorted sample.
//! - Kendall: concordant minus discordant pairs via a sort on `a` and a
//!   merge-sort inversion count on `b`, with ties contributing zero.
//! - Wilcoxon pair: `#{i<j : d_i + d_j > 0}` via sort and binary search.
//! - Third central moment: the closed-form unbiased estimator
//!   `n / ((n-1)(n-2)) * sum (y - mean)^3`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;

/// Largest kernel degree supported by exact tuple enumeration.
pub const MAX_DEGREE: usize = 3;

/// A single label observation fed to a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelValue {
    Scalar(f64),
    Pair(f64, f64),
}

impl LabelValue {
    pub fn is_finite(&self) -> bool {
        match *self {
            LabelValue::Scalar(y) => y.is_finite(),
            LabelValue::Pair(a, b) => a.is_finite() && b.is_finite(),
        }
    }

    /// The primary coordinate: the scalar itself, or `a` for a pair.
    pub fn primary(&self) -> f64 {
        match *self {
            LabelValue::Scalar(y) => y,
            LabelValue::Pair(a, _) => a,
        }
    }

    fn shape(&self) -> LabelShape {
        match self {
            LabelValue::Scalar(_) => LabelShape::Scalar,
            LabelValue::Pair(..) => LabelShape::Pair,
        }
    }
}

/// Whether a kernel consumes scalars or `(a, b)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelShape {
    Scalar,
    Pair,
}

/// Exact sub-quadratic algorithm available for a kernel's full tuple sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FastPath {
    Gini,
    Kendall,
    WilcoxonPair,
    ThirdCentralMoment,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Builtin {
    Mean,
    Gini,
    Kendall,
    WilcoxonPair,
    ThirdCentralMoment,
}

type CustomFn = Arc<dyn Fn(&[LabelValue]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Form {
    Builtin(Builtin),
    Custom(CustomFn, LabelShape),
}

/// A symmetric kernel together with its degree and optional fast path.
#[derive(Clone)]
pub struct KernelSpec {
    name: String,
    degree: usize,
    form: Form,
    fast_path: FastPath,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("degree", &self.degree)
            .field("fast_path", &self.fast_path)
            .finish()
    }
}

/// Names accepted by [`builtin_kernel`].
pub const BUILTIN_NAMES: [&str; 5] = ["mean", "gini", "kendall", "wilcoxon-pair", "third-central-moment"];

/// Looks up a built-in kernel by name.
pub fn builtin_kernel(name: &str) -> Result<KernelSpec> {
    let (builtin, degree, fast_path) = match name {
        "mean" => (Builtin::Mean, 1, FastPath::None),
        "gini" => (Builtin::Gini, 2, FastPath::Gini),
        "kendall" => (Builtin::Kendall, 2, FastPath::Kendall),
        "wilcoxon-pair" => (Builtin::WilcoxonPair, 2, FastPath::WilcoxonPair),
        "third-central-moment" => (Builtin::ThirdCentralMoment, 3, FastPath::ThirdCentralMoment),
        other => {
            return Err(Error::arg(format!(
                "unknown kernel '{other}' (expected one of {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(KernelSpec {
        name: name.to_string(),
        degree,
        form: Form::Builtin(builtin),
        fast_path,
    })
}

impl KernelSpec {
    /// A user-supplied kernel. The caller is responsible for symmetry.
    pub fn custom<F>(name: &str, degree: usize, shape: LabelShape, eval: F) -> Result<Self>
    where
        F: Fn(&[LabelValue]) -> f64 + Send + Sync + 'static,
    {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::arg(format!(
                "kernel degree must be in 1..={MAX_DEGREE}, got {degree}"
            )));
        }
        Ok(KernelSpec {
            name: name.to_string(),
            degree,
            form: Form::Custom(Arc::new(eval), shape),
            fast_path: FastPath::None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn fast_path(&self) -> FastPath {
        self.fast_path
    }

    pub fn label_shape(&self) -> LabelShape {
        match &self.form {
            Form::Builtin(Builtin::Kendall) => LabelShape::Pair,
            Form::Builtin(_) => LabelShape::Scalar,
            Form::Custom(_, shape) => *shape,
        }
    }

    /// Checks that `value` has the shape this kernel consumes and is finite.
    pub fn check_value(&self, value: &LabelValue) -> Result<()> {
        if value.shape() != self.label_shape() {
            return Err(Error::arg(format!(
                "kernel '{}' expects {:?} labels, got {:?}",
                self.name,
                self.label_shape(),
                value
            )));
        }
        if !value.is_finite() {
            return Err(Error::Domain(format!("non-finite label value {value:?}")));
        }
        Ok(())
    }

    /// Evaluates the kernel without validation. `tuple.len()` must equal the degree.
    #[inline]
    pub(crate) fn eval_unchecked(&self, tuple: &[LabelValue]) -> f64 {
        match &self.form {
            Form::Builtin(b) => eval_builtin(*b, tuple),
            Form::Custom(f, _) => f(tuple),
        }
    }
}

#[inline]
fn scalar(v: &LabelValue) -> f64 {
    match *v {
        LabelValue::Scalar(y) => y,
        LabelValue::Pair(a, _) => a,
    }
}

#[inline]
fn pair(v: &LabelValue) -> (f64, f64) {
    match *v {
        LabelValue::Pair(a, b) => (a, b),
        LabelValue::Scalar(y) => (y, y),
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn eval_builtin(b: Builtin, t: &[LabelValue]) -> f64 {
    match b {
        Builtin::Mean => scalar(&t[0]),
        Builtin::Gini => (scalar(&t[0]) - scalar(&t[1])).abs(),
        Builtin::Kendall => {
            let (a1, b1) = pair(&t[0]);
            let (a2, b2) = pair(&t[1]);
            sign(a1 - a2) * sign(b1 - b2)
        }
        Builtin::WilcoxonPair => {
            if scalar(&t[0]) + scalar(&t[1]) > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Builtin::ThirdCentralMoment => {
            let mut y = [scalar(&t[0]), scalar(&t[1]), scalar(&t[2])];
            // Fixed evaluation order keeps the result bitwise permutation invariant.
            y.sort_by(f64::total_cmp);
            third_moment_kernel(y[0], y[1], y[2])
        }
    }
}

/// `(1/3) sum y_i^3 - (1/2) sum_{i != j} y_i^2 y_j + 2 y_1 y_2 y_3`.
#[inline]
fn third_moment_kernel(a: f64, b: f64, c: f64) -> f64 {
    let cubes = a * a * a + b * b * b + c * c * c;
    let mixed = a * a * (b + c) + b * b * (a + c) + c * c * (a + b);
    cubes / 3.0 - mixed / 2.0 + 2.0 * a * b * c
}

/// Evaluates `kernel` on one tuple, validating arity, shape and finiteness.
pub fn eval_kernel(kernel: &KernelSpec, tuple: &[LabelValue]) -> Result<f64> {
    if tuple.len() != kernel.degree {
        return Err(Error::arg(format!(
            "kernel '{}' has degree {}, got a tuple of length {}",
            kernel.name,
            kernel.degree,
            tuple.len()
        )));
    }
    for v in tuple {
        kernel.check_value(v)?;
    }
    Ok(kernel.eval_unchecked(tuple))
}

/// Number of `r`-subsets of `n` items as a float.
pub fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    let mut acc = 1.0;
    for k in 0..r {
        acc = acc * (n - k) as f64 / (k + 1) as f64;
    }
    acc
}

fn zero_normalized(x: f64) -> f64 {
    // -0.0 and 0.0 compare equal but sort apart under total_cmp.
    x + 0.0
}

fn check_finite(values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite value {v}")));
        }
    }
    Ok(())
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = values.iter().map(|&v| zero_normalized(v)).collect();
    s.sort_by(f64::total_cmp);
    s
}

/// `sum_{i<j} |y_i - y_j|` in `O(n log n)`.
pub fn fast_gini_pairwise_sum(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::arg("gini pairwise sum needs at least 2 values"));
    }
    check_finite(values.iter().copied())?;
    let sorted = sorted_copy(values);
    let n = sorted.len() as f64;
    let mut acc = NeumaierSum::default();
    for (j, y) in sorted.iter().enumerate() {
        acc.add(y * (2.0 * (j as f64 + 1.0) - n - 1.0));
    }
    Ok(acc.sum())
}

/// `sum_{i<j} w_i w_j |y_i - y_j|` in `O(n log n)`.
pub fn weighted_gini_pairwise_sum(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::arg("values and weights differ in length"));
    }
    if values.len() < 2 {
        return Err(Error::arg("gini pairwise sum needs at least 2 values"));
    }
    check_finite(values.iter().chain(weights).copied())?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| zero_normalized(values[i]).total_cmp(&zero_normalized(values[j])));
    let mut below_w = NeumaierSum::default();
    let mut below_wy = NeumaierSum::default();
    let mut acc = NeumaierSum::default();
    for &k in &order {
        let (y, w) = (values[k], weights[k]);
        acc.add(w * (y * below_w.sum() - below_wy.sum()));
        below_w.add(w);
        below_wy.add(w * y);
    }
    Ok(acc.sum())
}

/// Counts strict inversions (`i < j` with `v[i] > v[j]`) by merge sort, sorting `v`.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            inv += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    inv
}

/// Sum over pairs of tied runs in a sorted slice: `sum_g t_g (t_g - 1) / 2`.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// `sum_{i<j} sign((a_i - a_j)(b_i - b_j))` in `O(n log n)`; ties contribute 0.
pub fn fast_kendall_sum(pairs: &[(f64, f64)]) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::arg("kendall sum needs at least 2 pairs"));
    }
    check_finite(pairs.iter().flat_map(|&(a, b)| [a, b]))?;
    let mut sorted: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(a, b)| (zero_normalized(a), zero_normalized(b)))
        .collect();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));

    let ties_a = tied_pairs(&sorted.iter().map(|p| p.0).collect::<Vec<_>>());
    let ties_joint = tied_pairs(&sorted);
    let mut b: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(n);
    let discordant = count_inversions(&mut b, &mut buf);
    // `b` is now sorted.
    let ties_b = tied_pairs(&b);

    let total = (n as u64) * (n as u64 - 1) / 2;
    let concordant_minus_discordant =
        total as i128 - ties_a as i128 - ties_b as i128 + ties_joint as i128 - 2 * discordant as i128;
    Ok(concordant_minus_discordant as f64)
}

/// `#{i<j : d_i + d_j > 0}` in `O(n log n)`.
pub fn fast_wilcoxon_pair_count(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::arg("wilcoxon pair count needs at least 2 values"));
    }
    check_finite(values.iter().copied())?;
    let sorted = sorted_copy(values);
    let mut count = 0u64;
    for (i, &d) in sorted.iter().enumerate() {
        let rest = &sorted[i + 1..];
        let first = rest.partition_point(|&e| e <= -d);
        count += (rest.len() - first) as u64;
    }
    Ok(count as f64)
}

/// The unbiased third-central-moment estimator `n/((n-1)(n-2)) sum (y - mean)^3`,
/// which coincides with the degree-3 U-statistic of the built-in kernel.
pub fn third_central_moment_u(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 3 {
        return Err(Error::arg("third central moment needs at least 3 values"));
    }
    check_finite(values.iter().copied())?;
    let mut mean = NeumaierSum::default();
    values.iter().for_each(|&v| mean.add(v));
    let mean = mean.sum() / n as f64;
    let mut m3 = NeumaierSum::default();
    values.iter().for_each(|&v| {
        let d = v - mean;
        m3.add(d * d * d)
    });
    let nf = n as f64;
    Ok(nf * m3.sum() / ((nf - 1.0) * (nf - 2.0)))
}

/// Plain `O(n^2)` double loop for `sum_{i<j} |y_i - y_j|`.
pub fn naive_gini_pairwise_sum(values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::default();
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            acc.add((values[i] - values[j]).abs());
        }
    }
    acc.sum()
}

/// Plain `O(n^2)` double loop for the Kendall concordance sum.
pub fn naive_kendall_sum(pairs: &[(f64, f64)]) -> f64 {
    let mut acc = 0i64;
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            acc += (sign(pairs[i].0 - pairs[j].0) * sign(pairs[i].1 - pairs[j].1)) as i64;
        }
    }
    acc as f64
}

/// Calls `f` with every increasing `r`-tuple of indices from `0..n`.
pub(crate) fn for_each_tuple(n: usize, r: usize, mut f: impl FnMut(&[usize])) {
    match r {
        1 => (0..n).for_each(|i| f(&[i])),
        2 => {
            for i in 0..n {
                for j in i + 1..n {
                    f(&[i, j]);
                }
            }
        }
        3 => {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        f(&[i, j, k]);
                    }
                }
            }
        }
        _ => unreachable!("kernel degree is capped at {MAX_DEGREE}"),
    }
}

/// `sum` over all `r`-subsets of `prod(w) * h(tuple)`, with `w ≡ 1` when
/// `weights` is `None`. Uses a fast path whenever one exists; otherwise
/// enumerates tuples with compensated summation.
pub(crate) fn tuple_sum(kernel: &KernelSpec, values: &[LabelValue], weights: Option<&[f64]>) -> f64 {
    let r = kernel.degree();
    let n = values.len();
    if n < r {
        return 0.0;
    }
    match (kernel.fast_path(), weights) {
        (FastPath::Gini, None) if n >= 2 => {
            let ys: Vec<f64> = values.iter().map(scalar).collect();
            return fast_gini_pairwise_sum(&ys).expect("validated values");
        }
        (FastPath::Gini, Some(w)) if n >= 2 => {
            let ys: Vec<f64> = values.iter().map(scalar).collect();
            return weighted_gini_pairwise_sum(&ys, w).expect("validated values");
        }
        (FastPath::Kendall, None) if n >= 2 => {
            let ps: Vec<(f64, f64)> = values.iter().map(pair).collect();
            return fast_kendall_sum(&ps).expect("validated values");
        }
        (FastPath::WilcoxonPair, None) if n >= 2 => {
            let ys: Vec<f64> = values.iter().map(scalar).collect();
            return fast_wilcoxon_pair_count(&ys).expect("validated values");
        }
        (FastPath::ThirdCentralMoment, None) if n >= 3 => {
            let ys: Vec<f64> = values.iter().map(scalar).collect();
            let u = third_central_moment_u(&ys).expect("validated values");
            return u * binomial(n, 3);
        }
        _ => {}
    }
    naive_tuple_sum(kernel, values, weights)
}

/// Direct enumeration of [`tuple_sum`], never using a fast path.
pub(crate) fn naive_tuple_sum(kernel: &KernelSpec, values: &[LabelValue], weights: Option<&[f64]>) -> f64 {
    let r = kernel.degree();
    let mut acc = NeumaierSum::default();
    let mut buf = [LabelValue::Scalar(0.0); MAX_DEGREE];
    for_each_tuple(values.len(), r, |idx| {
        let mut w = 1.0;
        for (slot, &i) in idx.iter().enumerate() {
            buf[slot] = values[i];
            if let Some(ws) = weights {
                w *= ws[i];
            }
        }
        acc.add(w * kernel.eval_unchecked(&buf[..r]));
    });
    acc.sum()
}
