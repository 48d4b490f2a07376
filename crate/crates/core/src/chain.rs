//! Inhomogeneous first-order binary Markov chains.
//!
//! A chain over `{0,1}^n` is stored as the probability that the first node
//! equals zero plus, for every later node, the two conditional probabilities
//! of being zero given the previous node. State-1 probabilities are always
//! derived as complements so there is a single source of truth.
//!
//! [`posterior_chain`] conditions a chain on node-wise observations and
//! returns the exact posterior, which is again a first-order chain.

use std::io::{self, Write};

use bitvec::prelude::*;
use rand::Rng;

use crate::csvfmt::fmt_f64;
use crate::error::{Error, Result};

/// Binary state vector; bit `i` is component `x_{i+1}` of the chain.
pub type BinaryVector = BitVec<u64, Lsb0>;

fn check_prob(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::InvalidProbability { what, value })
    }
}

/// Stationary probability of state 0 for a homogeneous two-state chain with
/// self-transition probabilities `p00` and `p11`.
pub fn stationary_init(p00: f64, p11: f64) -> Result<f64> {
    check_prob("p00", p00)?;
    check_prob("p11", p11)?;
    let denom = (1.0 - p00) + (1.0 - p11);
    if denom == 0.0 {
        return Err(Error::NoStationaryLaw);
    }
    Ok((1.0 - p11) / denom)
}

/// An inhomogeneous first-order Markov chain on binary vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMarkovChain {
    /// P(x_1 = 0).
    init0: f64,
    /// `trans[k - 2] = [P(x_k = 0 | x_{k-1} = 0), P(x_k = 0 | x_{k-1} = 1)]`
    /// for `k = 2..=n`.
    trans: Vec<[f64; 2]>,
}

impl BinaryMarkovChain {
    /// Builds a chain from its zero-state probabilities. `trans[k - 2]`
    /// holds `[P(x_k=0 | x_{k-1}=0), P(x_k=0 | x_{k-1}=1)]`.
    pub fn new(init0: f64, trans: Vec<[f64; 2]>) -> Result<Self> {
        check_prob("init0", init0)?;
        for row in &trans {
            check_prob("p0given0", row[0])?;
            check_prob("p0given1", row[1])?;
        }
        Ok(Self { init0, trans })
    }

    /// Homogeneous chain: the same transition table at every node.
    pub fn homogeneous(n: usize, init0: f64, p0_given0: f64, p0_given1: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("chain length must be >= 1".into()));
        }
        Self::new(init0, vec![[p0_given0, p0_given1]; n - 1])
    }

    /// Homogeneous chain started in its stationary law, parametrised by the
    /// self-transition probabilities `p00` and `p11`.
    pub fn stationary(n: usize, p00: f64, p11: f64) -> Result<Self> {
        let init0 = stationary_init(p00, p11)?;
        Self::homogeneous(n, init0, p00, 1.0 - p11)
    }

    /// Chain length `n`.
    pub fn len(&self) -> usize {
        self.trans.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// P(x_1 = 0).
    pub fn init0(&self) -> f64 {
        self.init0
    }

    /// P(x_k = 0 | x_{k-1} = prev) for `k = 2..=n`.
    pub fn p0_given(&self, k: usize, prev: bool) -> f64 {
        assert!(k >= 2 && k <= self.len(), "node index {k} out of range 2..={}", self.len());
        self.trans[k - 2][prev as usize]
    }

    /// Marginal zero-probabilities `P(x_k = 0)` for `k = 1..=n`, by forward
    /// propagation.
    pub fn marginals(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut m = self.init0;
        out.push(m);
        for row in &self.trans {
            m = m * row[0] + (1.0 - m) * row[1];
            debug_assert!((-1e-12..=1.0 + 1e-12).contains(&m));
            out.push(m.clamp(0.0, 1.0));
        }
        out
    }

    /// Pair law `f_k[i][j] = P(x_{k-1} = i, x_k = j)` for `k = 2..=n`.
    pub fn pair_joint(&self, k: usize) -> Result<[[f64; 2]; 2]> {
        if k < 2 || k > self.len() {
            return Err(Error::IndexOutOfRange { index: k, lo: 2, hi: self.len() });
        }
        let m_prev = self.marginals()[k - 2];
        let row = self.trans[k - 2];
        Ok([
            [m_prev * row[0], m_prev * (1.0 - row[0])],
            [(1.0 - m_prev) * row[1], (1.0 - m_prev) * (1.0 - row[1])],
        ])
    }

    /// Ancestral sample (bit `i` set means `x_{i+1} = 1`).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BinaryVector {
        let n = self.len();
        let mut x = BinaryVector::repeat(false, n);
        let mut prev = rng.random::<f64>() >= self.init0;
        x.set(0, prev);
        for k in 2..=n {
            let bit = rng.random::<f64>() >= self.trans[k - 2][prev as usize];
            x.set(k - 1, bit);
            prev = bit;
        }
        x
    }

    /// Probability of a full state vector under the chain.
    pub fn prob_of(&self, x: &BitSlice<u64, Lsb0>) -> f64 {
        assert_eq!(x.len(), self.len());
        let mut p = if x[0] { 1.0 - self.init0 } else { self.init0 };
        for k in 2..=self.len() {
            let p0 = self.trans[k - 2][x[k - 2] as usize];
            p *= if x[k - 1] { 1.0 - p0 } else { p0 };
        }
        p
    }

    /// Copy with every stored probability clamped into `[eps, 1 - eps]`.
    pub fn clamped(&self, eps: f64) -> Self {
        Self {
            init0: self.init0.clamp(eps, 1.0 - eps),
            trans: self
                .trans
                .iter()
                .map(|row| [row[0].clamp(eps, 1.0 - eps), row[1].clamp(eps, 1.0 - eps)])
                .collect(),
        }
    }

    /// CSV serialization: header `k,p0_init_or_p0g0,p0g1`; row 1 carries the
    /// initial probability with the last field empty, rows `2..=n` carry the
    /// two transition entries.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "k,p0_init_or_p0g0,p0g1")?;
        writeln!(w, "1,{},", fmt_f64(self.init0))?;
        for (idx, row) in self.trans.iter().enumerate() {
            writeln!(w, "{},{},{}", idx + 2, fmt_f64(row[0]), fmt_f64(row[1]))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Posterior chains
// ---------------------------------------------------------------------------

/// Node-wise Gaussian observation model: `y_i | x_i ~ N(x_i, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNodeLikelihood {
    sigma: f64,
}

impl GaussianNodeLikelihood {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidProbability { what: "sigma", value: sigma });
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// log p(y | x) for a single node.
    pub fn log_density(&self, y: f64, x: bool) -> f64 {
        let z = (y - x as u8 as f64) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Per-node log-likelihood table `[log p(y_i | x_i=0), log p(y_i | x_i=1)]`.
    pub fn log_table(&self, y: &[f64]) -> Vec<[f64; 2]> {
        y.iter().map(|&yi| [self.log_density(yi, false), self.log_density(yi, true)]).collect()
    }
}

/// Exact posterior chain of `prior` given node-wise Gaussian observations.
///
/// The result is invariant to adding a per-node constant to the
/// log-likelihoods; see [`posterior_chain_from_log_table`] for the general
/// per-node density-table interface.
pub fn posterior_chain(
    prior: &BinaryMarkovChain,
    lik: &GaussianNodeLikelihood,
    y: &[f64],
) -> Result<BinaryMarkovChain> {
    if y.len() != prior.len() {
        return Err(Error::LengthMismatch { left: prior.len(), right: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "observation" });
    }
    posterior_chain_from_log_table(prior, &lik.log_table(y))
}

/// Exact posterior chain from arbitrary per-node log-likelihoods
/// `log_lik[k - 1] = [log p(y_k | x_k=0), log p(y_k | x_k=1)]`.
///
/// Computed with backward messages rescaled to a maximum of one at each node
/// so that chains of length several hundred stay well conditioned.
pub fn posterior_chain_from_log_table(
    prior: &BinaryMarkovChain,
    log_lik: &[[f64; 2]],
) -> Result<BinaryMarkovChain> {
    let n = prior.len();
    if log_lik.len() != n {
        return Err(Error::LengthMismatch { left: n, right: log_lik.len() });
    }

    // Per-node likelihood weights, normalized so the larger one is 1.
    let mut g = Vec::with_capacity(n);
    for row in log_lik {
        if row[0].is_nan() || row[1].is_nan() || row[0] == f64::INFINITY || row[1] == f64::INFINITY
        {
            return Err(Error::NonFinite { what: "likelihood" });
        }
        let m = row[0].max(row[1]);
        if m == f64::NEG_INFINITY {
            return Err(Error::NonFinite { what: "likelihood (zero at both states)" });
        }
        g.push([(row[0] - m).exp(), (row[1] - m).exp()]);
    }

    // Backward messages beta[k - 1][x_k], rescaled to max 1 per node.
    let mut beta = vec![[1.0f64; 2]; n];
    for k in (1..n).rev() {
        // message into node k (1-based), summing over node k + 1
        let row = [prior.p0_given(k + 1, false), prior.p0_given(k + 1, true)];
        let mut b = [0.0f64; 2];
        for (prev, bv) in b.iter_mut().enumerate() {
            let p0 = row[prev];
            *bv = p0 * g[k][0] * beta[k][0] + (1.0 - p0) * g[k][1] * beta[k][1];
        }
        let m = b[0].max(b[1]);
        if m <= 0.0 {
            return Err(Error::NonFinite { what: "backward message" });
        }
        beta[k - 1] = [b[0] / m, b[1] / m];
    }

    let w0 = prior.init0() * g[0][0] * beta[0][0];
    let w1 = (1.0 - prior.init0()) * g[0][1] * beta[0][1];
    if w0 + w1 <= 0.0 {
        return Err(Error::NonFinite { what: "posterior normalization" });
    }
    let init0 = w0 / (w0 + w1);

    let mut trans = Vec::with_capacity(n - 1);
    for k in 2..=n {
        let mut row = [0.0f64; 2];
        for (prev, out) in row.iter_mut().enumerate() {
            let p0 = prior.p0_given(k, prev == 1);
            let a0 = p0 * g[k - 1][0] * beta[k - 1][0];
            let a1 = (1.0 - p0) * g[k - 1][1] * beta[k - 1][1];
            if a0 + a1 <= 0.0 {
                return Err(Error::NonFinite { what: "posterior normalization" });
            }
            *out = a0 / (a0 + a1);
        }
        trans.push(row);
    }
    BinaryMarkovChain::new(init0, trans)
}
