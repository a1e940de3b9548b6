//! Numerically stable primitives on the probability simplex.
//!
//! Everything here works in natural logarithms. Exponentials are taken after
//! max-subtraction, and arguments below [`EXP_FLOOR`] are flushed to zero so
//! that no denormal ever enters a sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent arguments below this value are flushed to zero.
pub const EXP_FLOOR: f64 = -745.0;

/// Absolute tolerance on the sum of a [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn flushed_exp(a: f64) -> f64 {
    if a < EXP_FLOOR {
        0.0
    } else {
        a.exp()
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::InvalidInput(format!(
            "non-finite entry {} at index {index}",
            values[index]
        ))),
        None => Ok(()),
    }
}

/// Raw scores over `C >= 2` classes. Entries are finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(z: LogitVector) -> Self {
        z.0
    }
}

impl AsRef<[f64]> for LogitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates entries in `[0, 1]` and a sum of 1 within [`SIMPLEX_TOL`].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        check_finite(&values)?;
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("probability {v} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(values))
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// All indices attaining the maximum.
pub fn argmax_set(values: &[f64]) -> Vec<usize> {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == top)
        .map(|(i, _)| i)
        .collect()
}

fn max_of(z: &[f64]) -> f64 {
    z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Writes `softmax(z)` into `out`. Callers guarantee finite, non-empty input
/// of matching length.
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    debug_assert_eq!(z.len(), out.len());
    let m = max_of(z);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = flushed_exp(v - m);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn softmax_vec(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    out
}

/// `log Σ exp(z_i)` for finite, non-empty `z`, without the validation of
/// [`log_sum_exp`].
pub fn log_sum_exp_unchecked(z: &[f64]) -> f64 {
    let m = max_of(z);
    let total: f64 = z.iter().map(|&v| flushed_exp(v - m)).sum();
    m + total.ln()
}

pub fn softmax(z: &LogitVector) -> ProbVector {
    ProbVector(softmax_vec(&z.0))
}

/// `log Σ exp(z_i)`. Accepts any non-empty finite slice, including a
/// singleton.
pub fn log_sum_exp(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::InvalidInput("log-sum-exp of an empty slice".into()));
    }
    check_finite(z)?;
    Ok(log_sum_exp_unchecked(z))
}

/// `softmax(softmax(z))`.
pub fn double_softmax(z: &LogitVector) -> ProbVector {
    let p = softmax_vec(&z.0);
    ProbVector(softmax_vec(&p))
}

/// Closed interval containing every entry of `double_softmax(z)` for `C`
/// classes: `[1/(e+C-1), e/(e+C-1)]`.
pub fn double_softmax_range(classes: usize) -> (f64, f64) {
    let e = std::f64::consts::E;
    let denom = e + classes as f64 - 1.0;
    (1.0 / denom, e / denom)
}

/// L1 norm.
pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
