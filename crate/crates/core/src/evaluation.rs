//! Metrics for comparing filtering methods: marginal-probability matrices,
//! Frobenius discrepancies, empirical quantile intervals, contact
//! probabilities and contact-length distributions.
//!
//! "Contact" between two sites means every component between and including
//! them equals one; the contact length of a site is the size of the maximal
//! all-ones run containing it. Undefined estimates (empty conditioning
//! events) are explicit `None`s and serialize as `NA`, never as 0.

use crate::chain::BinaryVector;
use crate::error::{Error, Result};

/// A `T x n` matrix of estimated one-probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl MarginalMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch { left: rows * cols, right: values.len() });
        }
        if values.iter().any(|v| !v.is_finite() || *v < -1e-12 || *v > 1.0 + 1e-12) {
            return Err(Error::InvalidInput("marginal entries must lie in [0, 1]".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.cols + i]
    }

    pub fn set(&mut self, t: usize, i: usize, v: f64) {
        self.values[t * self.cols + i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }
}

/// Frobenius norm of the entrywise difference.
pub fn frobenius_diff(a: &MarginalMatrix, b: &MarginalMatrix) -> Result<f64> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::LengthMismatch { left: a.values.len(), right: b.values.len() });
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Among samples with `x_i = 1`, the fraction where every component
/// between sites `i` and `j` (inclusive, 0-based) equals one. `None` when
/// no sample has `x_i = 1`.
pub fn contact_probability(samples: &[BinaryVector], i: usize, j: usize) -> Option<f64> {
    let (a, b) = (i.min(j), i.max(j));
    let mut cond = 0usize;
    let mut joint = 0usize;
    for x in samples {
        if x[i] {
            cond += 1;
            if x[a..=b].all() {
                joint += 1;
            }
        }
    }
    if cond > 0 {
        Some(joint as f64 / cond as f64)
    } else {
        None
    }
}

/// Empirical cumulative distribution of the contact length of a uniformly
/// chosen site conditioned on carrying a one: each maximal all-ones run of
/// length `L` contributes weight `L` (each of its sites is a valid pick),
/// normalized by the total number of ones. Entry `l-1` holds `P(L <= l)`;
/// `None` when no sample contains a one.
pub fn contact_length_cdf(samples: &[BinaryVector]) -> Option<Vec<f64>> {
    let n = samples.first()?.len();
    let mut weight = vec![0.0f64; n + 1];
    let mut total = 0.0f64;
    for x in samples {
        let mut i = 0;
        while i < n {
            if x[i] {
                let start = i;
                while i < n && x[i] {
                    i += 1;
                }
                let len = i - start;
                weight[len] += len as f64;
                total += len as f64;
            } else {
                i += 1;
            }
        }
    }
    if total <= 0.0 {
        return None;
    }
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weight.iter().skip(1) {
        acc += w / total;
        cdf.push(acc);
    }
    Some(cdf)
}

/// Central empirical quantile interval at the given coverage level,
/// computed by linear interpolation of the order statistics (the type-7
/// convention: the p-quantile interpolates between order statistics at the
/// fractional rank `(B - 1) p`).
pub fn quantile_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 values".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidProbability { what: "level", value: level });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "quantile input" });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let type7 = |p: f64| {
        let h = (sorted.len() - 1) as f64 * p;
        let i = (h.floor() as usize).min(sorted.len() - 2);
        sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
    };
    let tail = (1.0 - level) / 2.0;
    Ok((type7(tail), type7(1.0 - tail)))
}
