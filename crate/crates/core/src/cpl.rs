//! Continuous piecewise-linear functions on a closed interval.
//!
//! A function is stored as strictly increasing breakpoints plus the values
//! there, so continuity holds by construction and adjacent pieces share
//! their endpoint value. Piece intercept/slope pairs are derived on demand.

use std::io::{self, Write};

use crate::csvfmt::fmt_f64;
use crate::error::{Error, Result};

/// Default collinearity-pruning tolerance, relative to the largest absolute
/// function value. LP vertex arithmetic introduces last-digit noise; three
/// consecutive points within this tolerance of one line are merged.
pub const DEFAULT_PRUNE_TOL: f64 = 1e-10;

/// Breakpoints closer than this are merged, keeping the larger value.
pub const MERGE_TOL: f64 = 1e-12;

const EVAL_SLACK: f64 = 1e-12;

/// A continuous piecewise-linear function, or a single-point function for
/// width-zero domains (no pieces, one breakpoint).
#[derive(Debug, Clone, PartialEq)]
pub struct CplFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

/// One linear piece: `f(t) = intercept + slope * t` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// 1-based piece index.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub intercept: f64,
    pub slope: f64,
}

impl CplFunction {
    /// Single-point function on a width-zero domain.
    pub fn point(t: f64, value: f64) -> Result<Self> {
        if !t.is_finite() || !value.is_finite() {
            return Err(Error::NonFinite { what: "point function" });
        }
        Ok(Self { breakpoints: vec![t], values: vec![value] })
    }

    pub fn is_point(&self) -> bool {
        self.breakpoints.len() == 1
    }

    /// Builds a function from sampled `(breakpoint, value)` pairs with the
    /// default pruning tolerance. Breakpoints must be sorted; duplicates
    /// within [`MERGE_TOL`] are merged keeping the larger value (the
    /// functions represented here are maxima of subproblem values), and
    /// collinear interior points are pruned. Domain endpoints are kept.
    pub fn from_samples(breakpoints: &[f64], values: &[f64]) -> Result<Self> {
        Self::from_samples_with_tol(breakpoints, values, DEFAULT_PRUNE_TOL)
    }

    pub fn from_samples_with_tol(breakpoints: &[f64], values: &[f64], rel_tol: f64) -> Result<Self> {
        if breakpoints.len() != values.len() {
            return Err(Error::LengthMismatch { left: breakpoints.len(), right: values.len() });
        }
        if breakpoints.iter().chain(values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "samples" });
        }
        if breakpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("breakpoints must be sorted".into()));
        }

        // merge near-duplicate breakpoints, keeping the max value
        let mut bps: Vec<f64> = Vec::with_capacity(breakpoints.len());
        let mut vals: Vec<f64> = Vec::with_capacity(values.len());
        for (&b, &v) in breakpoints.iter().zip(values) {
            match bps.last() {
                Some(&last) if b - last <= MERGE_TOL => {
                    let lv = vals.last_mut().unwrap();
                    *lv = lv.max(v);
                }
                _ => {
                    bps.push(b);
                    vals.push(v);
                }
            }
        }
        if bps.len() < 2 {
            return Err(Error::TooFewBreakpoints { got: bps.len() });
        }

        // prune collinear interior points
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = rel_tol * scale;
        let mut kb: Vec<f64> = Vec::with_capacity(bps.len());
        let mut kv: Vec<f64> = Vec::with_capacity(vals.len());
        for i in 0..bps.len() {
            kb.push(bps[i]);
            kv.push(vals[i]);
            while kb.len() >= 3 {
                let a = kb.len() - 3;
                let (t0, t1, t2) = (kb[a], kb[a + 1], kb[a + 2]);
                let (v0, v1, v2) = (kv[a], kv[a + 1], kv[a + 2]);
                let chord = v0 + (v2 - v0) * (t1 - t0) / (t2 - t0);
                if (v1 - chord).abs() <= tol {
                    kb.remove(a + 1);
                    kv.remove(a + 1);
                } else {
                    break;
                }
            }
        }
        Ok(Self { breakpoints: kb, values: kv })
    }

    /// Number of linear pieces `M` (zero for a point function).
    pub fn num_pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Domain `[t_min, t_max]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Evaluates by linear interpolation; exact at breakpoints. Arguments
    /// within `1e-12` of the domain are clamped, anything further is an
    /// error.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !t.is_finite() || t < lo - EVAL_SLACK || t > hi + EVAL_SLACK {
            return Err(Error::OutOfDomain { t, lo, hi });
        }
        let t = t.clamp(lo, hi);
        // index of the piece containing t
        let idx = match self.breakpoints.binary_search_by(|b| b.partial_cmp(&t).unwrap()) {
            Ok(i) => return Ok(self.values[i]),
            Err(i) => i - 1,
        };
        let (t0, t1) = (self.breakpoints[idx], self.breakpoints[idx + 1]);
        let (v0, v1) = (self.values[idx], self.values[idx + 1]);
        Ok(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
    }

    /// Intercept and slope of piece `j` (1-based), so `f(t) = a + b t` there.
    pub fn piece_coeffs(&self, j: usize) -> Result<(f64, f64)> {
        if j < 1 || j > self.num_pieces() {
            return Err(Error::IndexOutOfRange { index: j, lo: 1, hi: self.num_pieces() });
        }
        let (t0, t1) = (self.breakpoints[j - 1], self.breakpoints[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        let slope = (v1 - v0) / (t1 - t0);
        Ok((v0 - slope * t0, slope))
    }

    /// Iterates over the linear pieces. A point function yields a single
    /// degenerate segment with zero slope, which lets parametric solvers
    /// treat width-zero continuations uniformly.
    pub fn segments(&self) -> Vec<Segment> {
        if self.is_point() {
            return vec![Segment {
                index: 1,
                lo: self.breakpoints[0],
                hi: self.breakpoints[0],
                intercept: self.values[0],
                slope: 0.0,
            }];
        }
        (1..=self.num_pieces())
            .map(|j| {
                let (intercept, slope) = self.piece_coeffs(j).unwrap();
                Segment { index: j, lo: self.breakpoints[j - 1], hi: self.breakpoints[j], intercept, slope }
            })
            .collect()
    }

    /// Debug dump as `t,value` rows.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,value")?;
        for (b, v) in self.breakpoints.iter().zip(&self.values) {
            writeln!(w, "{},{}", fmt_f64(*b), fmt_f64(*v))?;
        }
        Ok(())
    }
}
