//! Ensembles of binary state vectors: Bayesian estimation of the assumed
//! chain from members, stochastic updating through a transition rule, and
//! independent resampling from an assumed posterior.

use std::io::{self, Write};

use bitvec::prelude::*;
use rand::Rng;

use crate::chain::{BinaryMarkovChain, BinaryVector};
use crate::error::{Error, Result};
use crate::optimizer::TransitionRule;

/// A set of equally weighted binary state vectors, stored as packed bit
/// rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    n: usize,
    members: Vec<BinaryVector>,
}

impl Ensemble {
    pub fn new(members: Vec<BinaryVector>) -> Result<Self> {
        let n = members.first().map(|m| m.len()).ok_or_else(|| {
            Error::InvalidInput("ensemble needs at least one member".into())
        })?;
        if members.iter().any(|m| m.len() != n) {
            return Err(Error::InvalidInput("members differ in length".into()));
        }
        Ok(Self { n, members })
    }

    /// Chain length `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Ensemble size `M`.
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[BinaryVector] {
        &self.members
    }

    /// Fraction of members with `x_{i+1} = 1`, for 0-based `i`.
    pub fn mean_one(&self, i: usize) -> f64 {
        let ones = self.members.iter().filter(|m| m[i]).count();
        ones as f64 / self.members.len() as f64
    }

    /// Per-node fractions of ones.
    pub fn means_one(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.mean_one(i)).collect()
    }

    /// Snapshot CSV: one row per member, 0/1 entries.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for m in &self.members {
            let cells: Vec<&str> = m.iter().by_vals().map(|b| if b { "1" } else { "0" }).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Beta hyperparameters of the per-parameter estimation prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EstimationPrior {
    fn default() -> Self {
        Self { alpha: 2.0, beta: 2.0 }
    }
}

impl EstimationPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidInput(format!("bad Beta prior ({alpha}, {beta})")));
        }
        Ok(Self { alpha, beta })
    }
}

/// Estimates an inhomogeneous first-order chain from ensemble members as
/// the posterior mean under independent Beta priors: counts of zeros at
/// node 1 and of `prev -> 0` transitions at each later node, smoothed by
/// `(alpha, beta)`. Every output is strictly inside `(0, 1)`; empty
/// conditioning cells fall back to the prior mean.
pub fn estimate_chain(e: &Ensemble, prior: &EstimationPrior) -> Result<BinaryMarkovChain> {
    let n = e.n();
    if n < 2 {
        return Err(Error::InvalidInput("estimation needs chain length >= 2".into()));
    }
    let m = e.size() as f64;
    let (a, b) = (prior.alpha, prior.beta);

    let zeros1 = e.members().iter().filter(|x| !x[0]).count() as f64;
    let init0 = (zeros1 + a) / (m + a + b);

    let mut trans = Vec::with_capacity(n - 1);
    for k in 1..n {
        // counts[prev][cur] over the bit pair (k-1, k), 0-based
        let mut counts = [[0.0f64; 2]; 2];
        for x in e.members() {
            counts[x[k - 1] as usize][x[k] as usize] += 1.0;
        }
        let row = |prev: usize| {
            let total = counts[prev][0] + counts[prev][1];
            (counts[prev][0] + a) / (total + a + b)
        };
        trans.push([row(0), row(1)]);
    }
    BinaryMarkovChain::new(init0, trans)
}

/// Updates one member through the factorized rule: the first component
/// from the first factor, later components sequentially conditioned on the
/// already-updated left neighbour and the member's own current component.
pub fn update_member<R: Rng + ?Sized>(
    x: &BitSlice<u64, Lsb0>,
    rule: &TransitionRule,
    rng: &mut R,
) -> BinaryVector {
    assert_eq!(x.len(), rule.n());
    let n = x.len();
    let mut out = BinaryVector::repeat(false, n);
    let p0 = rule.first().prob_zero(x[0]);
    let mut prev = rng.random::<f64>() >= p0;
    out.set(0, prev);
    for k in 2..=n {
        let p0 = rule.step(k).prob_zero(prev, x[k - 1]);
        let bit = rng.random::<f64>() >= p0;
        out.set(k - 1, bit);
        prev = bit;
    }
    out
}

/// Updates every member with a shared random stream (members in order).
pub fn update_ensemble<R: Rng + ?Sized>(
    e: &Ensemble,
    rule: &TransitionRule,
    rng: &mut R,
) -> Result<Ensemble> {
    if e.n() != rule.n() {
        return Err(Error::LengthMismatch { left: e.n(), right: rule.n() });
    }
    Ensemble::new(e.members().iter().map(|x| update_member(x, rule, rng)).collect())
}

/// The baseline update: discard the members and draw `m` independent
/// ancestral samples from the assumed posterior chain.
pub fn resample_assumed<R: Rng + ?Sized>(
    posterior: &BinaryMarkovChain,
    m: usize,
    rng: &mut R,
) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::InvalidInput("ensemble size must be >= 1".into()));
    }
    Ensemble::new((0..m).map(|_| posterior.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn member(bits: &[u8]) -> BinaryVector {
        let mut v = BinaryVector::repeat(false, bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b == 1);
        }
        v
    }

    #[test]
    fn estimate_init_is_beta_posterior_mean() {
        // 20 members, 8 with x_1 = 0, default (2, 2) prior
        let mut members = Vec::new();
        for i in 0..20 {
            members.push(member(&[if i < 8 { 0 } else { 1 }, 0]));
        }
        let e = Ensemble::new(members).unwrap();
        let chain = estimate_chain(&e, &EstimationPrior::default()).unwrap();
        assert_abs_diff_eq!(chain.init0(), 10.0 / 24.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_conditioning_falls_back_to_prior_mean() {
        // no member has x_1 = 1
        let e = Ensemble::new(vec![member(&[0, 0]), member(&[0, 1])]).unwrap();
        let chain = estimate_chain(&e, &EstimationPrior::default()).unwrap();
        assert_abs_diff_eq!(chain.p0_given(2, true), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(chain.p0_given(2, false), (1.0 + 2.0) / (2.0 + 4.0), epsilon = 1e-15);
    }

    #[test]
    fn estimate_limits_for_constant_ensemble() {
        let m = 100_000;
        let e = Ensemble::new(vec![member(&[0, 0, 0]); m]).unwrap();
        let chain = estimate_chain(&e, &EstimationPrior::default()).unwrap();
        assert!(chain.init0() > 0.9999);
        assert!(chain.p0_given(2, false) > 0.9999);
        assert_abs_diff_eq!(chain.p0_given(2, true), 0.5, epsilon = 1e-15);
        // strictly interior
        assert!(chain.init0() < 1.0);
    }

    #[test]
    fn estimate_invariant_to_member_order() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let chain = toy::prior();
        let mut members: Vec<BinaryVector> = (0..50).map(|_| chain.sample(&mut rng)).collect();
        let a = estimate_chain(&Ensemble::new(members.clone()).unwrap(), &EstimationPrior::default()).unwrap();
        members.reverse();
        members.swap(3, 17);
        let b = estimate_chain(&Ensemble::new(members).unwrap(), &EstimationPrior::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_converges_to_truth() {
        let truth = BinaryMarkovChain::new(0.35, vec![[0.7, 0.2], [0.55, 0.4], [0.8, 0.15]]).unwrap();
        let m = 100_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let e = Ensemble::new((0..m).map(|_| truth.sample(&mut rng)).collect()).unwrap();
        let est = estimate_chain(&e, &EstimationPrior::default()).unwrap();
        // within 3 posterior standard deviations of the truth
        let sd = |p: f64, count: f64| (p * (1.0 - p) / count).sqrt();
        assert!((est.init0() - 0.35).abs() < 3.0 * sd(0.35, m as f64));
        let marg = truth.marginals();
        for k in 2..=4 {
            for prev in [false, true] {
                let p = truth.p0_given(k, prev);
                let share = if prev { 1.0 - marg[k - 2] } else { marg[k - 2] };
                let count = m as f64 * share;
                let diff = (est.p0_given(k, prev) - p).abs();
                assert!(diff < 3.0 * sd(p, count), "k {k} prev {prev}: {diff}");
            }
        }
    }

    #[test]
    fn identity_rule_is_noop() {
        let chain = toy::prior();
        let rule = TransitionRule::identity(&chain);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = chain.sample(&mut rng);
            let xt = update_member(&x, &rule, &mut rng);
            assert_eq!(x, xt);
        }
    }

    #[test]
    fn update_matches_exact_conditional_distribution() {
        // empirical conditional of x̃ given fixed x vs the product of factors
        let prior = toy::prior();
        let posterior = toy::posterior();
        let rule = crate::optimizer::build_optimal_q(&prior, &posterior).unwrap();
        let x = member(&[1, 0, 1, 1]);
        let x_mask = 0b1101usize;
        let reps = 400_000;
        let mut rng = ChaCha12Rng::seed_from_u64(40);
        let mut counts = [0usize; 16];
        for _ in 0..reps {
            let xt = update_member(&x, &rule, &mut rng);
            let mut s = 0usize;
            for b in 0..4 {
                s |= (xt[b] as usize) << b;
            }
            counts[s] += 1;
        }
        for (s, &c) in counts.iter().enumerate() {
            let p = crate::oracle::coupling_prob(&rule, x_mask, s, 4);
            let freq = c as f64 / reps as f64;
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * se + 1e-9, "state {s}: {freq} vs {p}");
        }
    }

    #[test]
    fn resample_assumed_behaviour() {
        let deterministic = BinaryMarkovChain::homogeneous(5, 1.0, 1.0, 0.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let e = resample_assumed(&deterministic, 7, &mut rng).unwrap();
        assert_eq!(e.size(), 7);
        assert!(e.members().iter().all(|m| m.not_any()));

        let a = resample_assumed(&toy::posterior(), 5, &mut ChaCha12Rng::seed_from_u64(2)).unwrap();
        let b = resample_assumed(&toy::posterior(), 5, &mut ChaCha12Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resample_marginals_match_posterior() {
        let posterior = toy::posterior();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let m = 200_000;
        let e = resample_assumed(&posterior, m, &mut rng).unwrap();
        for (i, expect0) in toy::expected::POSTERIOR_MARGINAL0.iter().enumerate() {
            let freq1 = e.mean_one(i);
            let p1 = 1.0 - expect0;
            let se = (p1 * (1.0 - p1) / m as f64).sqrt();
            assert!((freq1 - p1).abs() < 3.0 * se + 1e-6, "node {i}: {freq1} vs {p1}");
        }
    }

    #[test]
    fn snapshot_csv_layout() {
        let e = Ensemble::new(vec![member(&[1, 0, 1]), member(&[0, 0, 1])]).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0,1\n0,0,1\n");
    }
}
