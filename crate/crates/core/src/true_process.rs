//! The synthetic spatio-temporal binary truth process and its observations.
//!
//! A lattice of `n` sites evolves over discrete time; site `i` at time `t`
//! depends on the already-sampled left neighbour at time `t` and on the
//! three sites `i-1, i, i+1` at time `t-1`. Sites outside the lattice count
//! as zero, which also makes the virtual state before the first step the
//! all-zero vector. Value 0 plays the role of the initially dominant phase,
//! value 1 of the invading one.

use std::io::{self, BufRead, Write};

use bitvec::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::chain::BinaryVector;
use crate::csvfmt::fmt_f64;
use crate::error::{Error, Result};

/// The sixteen conditional probabilities driving the process:
/// `P(x_i^t = 1 | x_{i-1}^t, x_{i-1}^{t-1}, x_i^{t-1}, x_{i+1}^{t-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModelTable {
    /// `p_one[ctx][left_curr]` with `ctx = left_prev | self_prev<<1 | right_prev<<2`.
    p_one: [[f64; 2]; 8],
}

/// Default entries as `(left_prev, self_prev, right_prev, p1_left_curr_1,
/// p1_left_curr_0)` rows.
const DEFAULT_ROWS: [(u8, u8, u8, f64, f64); 8] = [
    (0, 0, 0, 0.0100, 0.0050),
    (1, 0, 0, 0.0400, 0.0100),
    (0, 1, 0, 0.9999, 0.9800),
    (1, 1, 0, 0.9999, 0.9900),
    (0, 0, 1, 0.0400, 0.0400),
    (1, 0, 1, 0.9800, 0.0400),
    (0, 1, 1, 0.9999, 0.9800),
    (1, 1, 1, 0.9999, 0.9800),
];

impl Default for TrueModelTable {
    fn default() -> Self {
        let mut p_one = [[0.0; 2]; 8];
        for &(lp, sp, rp, p_left1, p_left0) in &DEFAULT_ROWS {
            let ctx = (lp | sp << 1 | rp << 2) as usize;
            p_one[ctx] = [p_left0, p_left1];
        }
        Self { p_one }
    }
}

impl TrueModelTable {
    /// Builds a table from explicit entries; `p_one[ctx][left_curr]` with
    /// `ctx = left_prev | self_prev<<1 | right_prev<<2`.
    pub fn new(p_one: [[f64; 2]; 8]) -> Result<Self> {
        for row in &p_one {
            for &p in row {
                if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                    return Err(Error::InvalidProbability { what: "true model entry", value: p });
                }
            }
        }
        Ok(Self { p_one })
    }

    /// `P(x_i^t = 1)` given the neighbourhood; `None` marks an
    /// out-of-lattice neighbour, which is substituted with 0 before lookup.
    pub fn cond_prob_one(
        &self,
        left_prev: Option<bool>,
        self_prev: Option<bool>,
        right_prev: Option<bool>,
        left_curr: Option<bool>,
    ) -> f64 {
        let ctx = left_prev.unwrap_or(false) as usize
            | (self_prev.unwrap_or(false) as usize) << 1
            | (right_prev.unwrap_or(false) as usize) << 2;
        self.p_one[ctx][left_curr.unwrap_or(false) as usize]
    }

    /// CSV serialization; round-trips bit-exactly through [`Self::read_csv`].
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "left_prev,self_prev,right_prev,p1_left_curr1,p1_left_curr0")?;
        for &(lp, sp, rp, ..) in &DEFAULT_ROWS {
            let ctx = (lp | sp << 1 | rp << 2) as usize;
            writeln!(
                w,
                "{lp},{sp},{rp},{},{}",
                fmt_f64(self.p_one[ctx][1]),
                fmt_f64(self.p_one[ctx][0])
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut p_one = [[0.0; 2]; 8];
        let mut lines = String::new();
        r.read_to_string(&mut lines).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for (i, line) in lines.lines().enumerate() {
            if i == 0 {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::InvalidInput(format!("bad table row: {line}")));
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::InvalidInput(e.to_string()));
            let ctx = (parse(fields[0])? as usize)
                | (parse(fields[1])? as usize) << 1
                | (parse(fields[2])? as usize) << 2;
            p_one[ctx][1] = parse(fields[3])?;
            p_one[ctx][0] = parse(fields[4])?;
        }
        Self::new(p_one)
    }
}

/// Lattice width, horizon and observation noise of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessConfig {
    pub n: usize,
    pub t_horizon: usize,
    pub sigma: f64,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self { n: 400, t_horizon: 100, sigma: 2.0 }
    }
}

impl ProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.t_horizon < 1 {
            return Err(Error::InvalidInput("n and T must be >= 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidProbability { what: "sigma", value: self.sigma });
        }
        Ok(())
    }
}

/// Samples `x^t` from `x^{t-1}`, left to right: each site conditions on the
/// freshly sampled left neighbour and the three previous-time neighbours.
/// Pass the all-zero vector as `x_prev` for the first step.
pub fn simulate_step<R: Rng + ?Sized>(
    table: &TrueModelTable,
    x_prev: &BitSlice<u64, Lsb0>,
    rng: &mut R,
) -> BinaryVector {
    let n = x_prev.len();
    let mut x = BinaryVector::repeat(false, n);
    for i in 0..n {
        let p1 = table.cond_prob_one(
            if i > 0 { Some(x_prev[i - 1]) } else { None },
            Some(x_prev[i]),
            if i + 1 < n { Some(x_prev[i + 1]) } else { None },
            if i > 0 { Some(x[i - 1]) } else { None },
        );
        x.set(i, rng.random::<f64>() < p1);
    }
    x
}

/// Exact probability of moving from `prev` to `next` in one step.
pub fn step_prob(table: &TrueModelTable, prev: &BitSlice<u64, Lsb0>, next: &BitSlice<u64, Lsb0>) -> f64 {
    assert_eq!(prev.len(), next.len());
    let n = prev.len();
    let mut p = 1.0;
    for i in 0..n {
        let p1 = table.cond_prob_one(
            if i > 0 { Some(prev[i - 1]) } else { None },
            Some(prev[i]),
            if i + 1 < n { Some(prev[i + 1]) } else { None },
            if i > 0 { Some(next[i - 1]) } else { None },
        );
        p *= if next[i] { p1 } else { 1.0 - p1 };
    }
    p
}

/// Independent Gaussian observations with mean `x_i` and standard deviation
/// `sigma`.
pub fn simulate_observation<R: Rng + ?Sized>(
    x: &BitSlice<u64, Lsb0>,
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    x.iter().by_vals().map(|b| b as u8 as f64 + normal.sample(rng)).collect()
}

/// Writes a truth trajectory as a `T x n` bit matrix.
pub fn write_truth_csv<W: Write>(truth: &[BinaryVector], w: &mut W) -> io::Result<()> {
    for row in truth {
        let cells: Vec<&str> = row.iter().by_vals().map(|b| if b { "1" } else { "0" }).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Writes observations as a `T x n` real matrix.
pub fn write_observations_csv<W: Write>(obs: &[Vec<f64>], w: &mut W) -> io::Result<()> {
    for row in obs {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
