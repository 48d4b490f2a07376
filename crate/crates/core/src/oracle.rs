//! Independent brute-force references.
//!
//! Everything here is deliberately simple and shares no solver code with
//! [`crate::optimizer`]: exact filtering over the full `2^n` state space,
//! exact pushforward enumeration for coupling validation, and a dense-grid
//! dynamic program that lower-bounds the optimal expected number of
//! unchanged components.

use rayon::prelude::*;

use crate::chain::{BinaryMarkovChain, BinaryVector};
use crate::error::{Error, Result};
use crate::optimizer::TransitionRule;
use crate::true_process::TrueModelTable;

/// Exact filtering is limited to this many sites (`2^n` states).
pub const MAX_EXACT_N: usize = 14;

/// Pushforward enumeration is limited to this many sites (`4^n` pairs).
pub const MAX_PUSHFORWARD_N: usize = 10;

/// The grid dynamic program is limited to this many sites.
pub const MAX_GRID_DP_N: usize = 5;

/// Grid resolution of the inner two-variable maximizer.
const Q_GRID: usize = 512;

// ---------------------------------------------------------------------------
// Exact filtering
// ---------------------------------------------------------------------------

/// A filtering distribution over all `2^n` states at one time step. Bit
/// `i` of a state index holds `x_{i+1}`.
#[derive(Debug, Clone)]
pub struct ExactFilterState {
    n: usize,
    probs: Vec<f64>,
}

impl ExactFilterState {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// P(x_{i+1} = 1) for 0-based site `i`.
    pub fn marginal_one(&self, i: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(s, _)| s >> i & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }

    /// Exact contact probability between 0-based sites `i` and `j`: the
    /// probability that every site between them (inclusive) is 1, given
    /// `x_{i+1} = 1`. `None` when the conditioning event has probability 0.
    pub fn contact_probability(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (i.min(j), i.max(j));
        let span: usize = ((1usize << (b - a + 1)) - 1) << a;
        let mut cond = 0.0;
        let mut joint = 0.0;
        for (s, p) in self.probs.iter().enumerate() {
            if s >> i & 1 == 1 {
                cond += p;
                if s & span == span {
                    joint += p;
                }
            }
        }
        if cond > 0.0 {
            Some(joint / cond)
        } else {
            None
        }
    }

    /// Exact cumulative distribution of the all-ones run length containing
    /// a uniformly chosen site, conditioned on that site being 1. Entry
    /// `l-1` holds `P(L <= l)`. `None` when no state with a 1 has mass.
    pub fn contact_length_cdf(&self) -> Option<Vec<f64>> {
        let n = self.n;
        let mut weight = vec![0.0f64; n + 1];
        let mut total = 0.0;
        for (s, p) in self.probs.iter().enumerate() {
            let mut i = 0;
            while i < n {
                if s >> i & 1 == 1 {
                    let start = i;
                    while i < n && s >> i & 1 == 1 {
                        i += 1;
                    }
                    let len = i - start;
                    weight[len] += p * len as f64;
                    total += p * len as f64;
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
}

/// Likelihood weights per state for one observation row.
fn state_likelihoods(y: &[f64], sigma: f64) -> Vec<f64> {
    let n = y.len();
    // log-likelihood per state, assembled by doubling; shifted to max 0
    let mut ll = vec![0.0f64; 1 << n];
    for (i, &yi) in y.iter().enumerate() {
        let l0 = -0.5 * (yi / sigma) * (yi / sigma);
        let l1 = -0.5 * ((yi - 1.0) / sigma) * ((yi - 1.0) / sigma);
        let block = 1usize << i;
        for base in (0..ll.len()).step_by(block << 1) {
            for s in base..base + block {
                ll[s] += l0;
                ll[s + block] += l1;
            }
        }
    }
    let m = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ll.into_iter().map(|v| (v - m).exp()).collect()
}

/// One prediction sweep: pushes a distribution over `x^{t-1}` through the
/// sequential-in-`i` transition law exactly.
///
/// The product over sites is eliminated site by site: after applying the
/// factor of site `i`, the previous-time bit `i-1` occurs in no later
/// factor and is summed out, so the frontier never exceeds `n + 1` bits and
/// the sweep costs `O(n 2^n)` instead of `O(4^n)`.
pub fn predict_distribution(table: &TrueModelTable, prev: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(prev.len(), 1 << n);
    if n == 1 {
        let p1_from0 = table.cond_prob_one(None, Some(false), None, None);
        let p1_from1 = table.cond_prob_one(None, Some(true), None, None);
        let one = prev[0] * p1_from0 + prev[1] * p1_from1;
        return vec![1.0 - one, one];
    }

    // stage 1: key = x_1^t | x_{1..n}^{t-1} << 1
    let mut cur = vec![0.0f64; 1 << (n + 1)];
    for (s, &w) in prev.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let p1 = table.cond_prob_one(
            None,
            Some(s & 1 == 1),
            Some(s >> 1 & 1 == 1),
            None,
        );
        cur[s << 1] += w * (1.0 - p1);
        cur[(s << 1) | 1] += w * p1;
    }

    // stage i (2..=n): incoming key = x_{1..i-1}^t | x_{i-1..n}^{t-1} << (i-1)
    for i in 2..=n {
        let mut next = vec![0.0f64; 1 << (n + 1)];
        let in_bits = n - i + 2 + (i - 1); // prev suffix + new prefix
        for key in 0..1usize << in_bits {
            let w = cur[key];
            if w == 0.0 {
                continue;
            }
            let left_curr = key >> (i - 2) & 1 == 1;
            let left_prev = key >> (i - 1) & 1 == 1;
            let self_prev = key >> i & 1 == 1;
            let right_prev = if i < n { Some(key >> (i + 1) & 1 == 1) } else { None };
            let p1 = table.cond_prob_one(Some(left_prev), Some(self_prev), right_prev, Some(left_curr));
            // drop bit i-1 (x_{i-1}^{t-1}), insert x_i^t at position i-1
            let low = key & ((1 << (i - 1)) - 1);
            let high = key >> i << i;
            let base = high | low;
            next[base] += w * (1.0 - p1);
            next[base | 1 << (i - 1)] += w * p1;
        }
        cur = next;
    }

    // final layout: x^t in bits 0..n, x_n^{t-1} at bit n; sum it out
    let mut out = vec![0.0f64; 1 << n];
    for (s, o) in out.iter_mut().enumerate() {
        *o = cur[s] + cur[s | 1 << n];
    }
    out
}

/// Exact forward filtering over the full state space: predict through the
/// product transition law, update with node-wise Gaussian likelihoods,
/// renormalize. `y_all` is the `T x n` observation matrix.
pub fn exact_filter(
    table: &TrueModelTable,
    y_all: &[Vec<f64>],
    sigma: f64,
    n: usize,
) -> Result<Vec<ExactFilterState>> {
    if n > MAX_EXACT_N {
        return Err(Error::StateSpaceTooLarge { n, limit: MAX_EXACT_N });
    }
    if n == 0 || y_all.is_empty() {
        return Err(Error::InvalidInput("need n >= 1 and T >= 1".into()));
    }
    let mut states = Vec::with_capacity(y_all.len());
    // virtual all-zero state before the first step
    let mut prior = vec![0.0f64; 1 << n];
    prior[0] = 1.0;
    for y in y_all {
        if y.len() != n {
            return Err(Error::LengthMismatch { left: n, right: y.len() });
        }
        let pred = predict_distribution(table, &prior, n);
        let lik = state_likelihoods(y, sigma);
        let mut post: Vec<f64> = pred.iter().zip(&lik).map(|(p, l)| p * l).collect();
        let z: f64 = post.iter().sum();
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::NonFinite { what: "filter normalization" });
        }
        for p in &mut post {
            *p /= z;
        }
        prior = post.clone();
        states.push(ExactFilterState { n, probs: post });
    }
    Ok(states)
}

// ---------------------------------------------------------------------------
// Pushforward enumeration
// ---------------------------------------------------------------------------

/// The exact law of the updated vector plus the exact expected number of
/// unchanged components.
#[derive(Debug, Clone)]
pub struct Pushforward {
    pub probs: Vec<f64>,
    pub expected_unchanged: f64,
}

/// Probability of producing `xt` from `x` under the factorized rule.
pub fn coupling_prob(rule: &TransitionRule, x: usize, xt: usize, n: usize) -> f64 {
    let q0 = rule.first().prob_zero(x & 1 == 1);
    let mut p = if xt & 1 == 0 { q0 } else { 1.0 - q0 };
    for k in 2..=n {
        let q = rule.step(k).prob_zero(xt >> (k - 2) & 1 == 1, x >> (k - 1) & 1 == 1);
        p *= if xt >> (k - 1) & 1 == 0 { q } else { 1.0 - q };
    }
    p
}

/// Enumerates the full joint law of a chain, bit `i` of the index holding
/// `x_{i+1}`.
pub fn chain_joint_law(chain: &BinaryMarkovChain) -> Result<Vec<f64>> {
    let n = chain.len();
    if n > MAX_EXACT_N {
        return Err(Error::StateSpaceTooLarge { n, limit: MAX_EXACT_N });
    }
    let mut probs = Vec::with_capacity(1 << n);
    let mut x = BinaryVector::repeat(false, n);
    for s in 0..1usize << n {
        for b in 0..n {
            x.set(b, s >> b & 1 == 1);
        }
        probs.push(chain.prob_of(&x));
    }
    Ok(probs)
}

/// Exact pushforward of `prior` through `rule` by nested enumeration of all
/// `4^n` pairs, plus the exact expected number of unchanged components.
pub fn enumerate_pushforward(rule: &TransitionRule, prior: &BinaryMarkovChain) -> Result<Pushforward> {
    let n = prior.len();
    if n != rule.n() {
        return Err(Error::LengthMismatch { left: prior.len(), right: rule.n() });
    }
    if n > MAX_PUSHFORWARD_N {
        return Err(Error::StateSpaceTooLarge { n, limit: MAX_PUSHFORWARD_N });
    }
    let prior_law = chain_joint_law(prior)?;
    let mut probs = vec![0.0f64; 1 << n];
    let mut expected = 0.0;
    for (x, &fx) in prior_law.iter().enumerate() {
        if fx == 0.0 {
            continue;
        }
        for (xt, out) in probs.iter_mut().enumerate() {
            let p = fx * coupling_prob(rule, x, xt, n);
            *out += p;
            expected += p * (n - (x ^ xt).count_ones() as usize) as f64;
        }
    }
    Ok(Pushforward { probs, expected_unchanged: expected })
}

/// Expected number of unchanged components when the update ignores the
/// prior sample and resamples independently from the posterior:
/// `sum_k [f_k f̃_k + (1 - f_k)(1 - f̃_k)]` over the zero-marginals.
pub fn independent_coupling_expected_unchanged(
    prior: &BinaryMarkovChain,
    posterior: &BinaryMarkovChain,
) -> f64 {
    prior
        .marginals()
        .iter()
        .zip(posterior.marginals())
        .map(|(&fp, fq)| fp * fq + (1.0 - fp) * (1.0 - fq))
        .sum()
}

// ---------------------------------------------------------------------------
// Grid dynamic program
// ---------------------------------------------------------------------------

/// Lower-bounds the optimal expected number of unchanged components by
/// dynamic programming on a uniform grid of the pair parameters, with an
/// independent dense-grid two-variable maximizer in every cell (no code
/// shared with the vertex-enumeration solver).
pub fn grid_dp_optimum(
    prior: &BinaryMarkovChain,
    posterior: &BinaryMarkovChain,
    grid_steps: usize,
) -> Result<f64> {
    let n = prior.len();
    if n != posterior.len() {
        return Err(Error::LengthMismatch { left: prior.len(), right: posterior.len() });
    }
    if n > MAX_GRID_DP_N {
        return Err(Error::StateSpaceTooLarge { n, limit: MAX_GRID_DP_N });
    }
    if n < 2 || grid_steps < 1000 {
        return Err(Error::InvalidInput("need n >= 2 and grid_steps >= 1000".into()));
    }
    let prior = prior.clamped(crate::optimizer::PROB_CLAMP_EPS);
    let posterior = posterior.clamped(crate::optimizer::PROB_CLAMP_EPS);

    let fp = prior.marginals();
    let fq = posterior.marginals();
    let mut f00 = vec![0.0; n + 1]; // f_k^{00}, 1-based k
    let mut f10 = vec![0.0; n + 1];
    for k in 2..=n {
        let f = posterior.pair_joint(k).unwrap();
        f00[k] = f[0][0];
        f10[k] = f[1][0];
    }
    let bounds = |k: usize| -> (f64, f64) {
        ((fp[k - 1] + fq[k - 2] - 1.0).max(0.0), fp[k - 1].min(fq[k - 2]))
    };

    struct GridFn {
        lo: f64,
        hi: f64,
        vals: Vec<f64>,
    }
    impl GridFn {
        fn interp(&self, t: f64) -> f64 {
            let g = self.vals.len() - 1;
            let x = ((t - self.lo) / (self.hi - self.lo) * g as f64).clamp(0.0, g as f64);
            let i = (x as usize).min(g - 1);
            let frac = x - i as f64;
            self.vals[i] + frac * (self.vals[i + 1] - self.vals[i])
        }
    }

    // inner maximizer: dense grid over (q00, q10), the other two
    // conditionals recovered from the marginal equalities and checked
    let inner_max = |k: usize, t: f64, cont: Option<&GridFn>, q_grid: usize| -> f64 {
        let p00 = t;
        let p01 = fq[k - 2] - t;
        let p10 = fp[k - 1] - t;
        let p11 = 1.0 - fp[k - 1] - fq[k - 2] + t;
        let eps = 1e-13;
        let u_range = if p00 > eps {
            (((f00[k] - p01) / p00).max(0.0), (f00[k] / p00).min(1.0))
        } else {
            (0.0, 1.0)
        };
        let v_range = if p10 > eps {
            (((f10[k] - p11) / p10).max(0.0), (f10[k] / p10).min(1.0))
        } else {
            (0.0, 1.0)
        };
        let (r0, r1) = if k < n { (prior.p0_given(k + 1, false), prior.p0_given(k + 1, true)) } else { (0.0, 0.0) };
        let mut best = f64::NEG_INFINITY;
        for iu in 0..=q_grid {
            let u = u_range.0 + (u_range.1 - u_range.0) * iu as f64 / q_grid as f64;
            let q01 = if p01 > eps { (f00[k] - p00 * u) / p01 } else { 0.0 };
            if !(-1e-9..=1.0 + 1e-9).contains(&q01) {
                continue;
            }
            let e_u = p00 * u - p01 * q01;
            let t_u = p00 * u * r0 + p01 * q01 * r1;
            for iv in 0..=q_grid {
                let v = v_range.0 + (v_range.1 - v_range.0) * iv as f64 / q_grid as f64;
                let q11 = if p11 > eps { (f10[k] - p10 * v) / p11 } else { 0.0 };
                if !(-1e-9..=1.0 + 1e-9).contains(&q11) {
                    continue;
                }
                let e = e_u + p10 * v - p11 * q11 + (1.0 - fp[k - 1]);
                let value = match cont {
                    Some(f) => e + f.interp(t_u + p10 * v * r0 + p11 * q11 * r1),
                    None => e,
                };
                if value > best {
                    best = value;
                }
            }
        }
        best
    };

    // backward over the t grid; the last node needs no continuation and its
    // objective is linear, so its optimum sits at a grid corner already
    let mut cont: Option<GridFn> = None;
    for k in (2..=n).rev() {
        let (lo, hi) = bounds(k);
        let q_grid = if k == n { 32 } else { Q_GRID };
        let vals: Vec<f64> = (0..=grid_steps)
            .into_par_iter()
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / grid_steps as f64;
                inner_max(k, t, cont.as_ref(), q_grid)
            })
            .collect();
        cont = Some(GridFn { lo, hi, vals });
    }

    // first node: one fixed t, one free conditional after the equality
    let w2 = cont.unwrap();
    let t1 = fp[0];
    let fq1 = fq[0];
    let (r0, r1) = (prior.p0_given(2, false), prior.p0_given(2, true));
    let u_lo = ((fq1 - (1.0 - t1)) / t1).max(0.0);
    let u_hi = (fq1 / t1).min(1.0);
    let mut best = f64::NEG_INFINITY;
    for iu in 0..=(Q_GRID * Q_GRID) {
        let u = u_lo + (u_hi - u_lo) * iu as f64 / (Q_GRID * Q_GRID) as f64;
        let q1 = (fq1 - t1 * u) / (1.0 - t1);
        if !(-1e-9..=1.0 + 1e-9).contains(&q1) {
            continue;
        }
        let e = t1 * u + (1.0 - t1) * (1.0 - q1);
        let value = e + w2.interp(t1 * u * r0 + (1.0 - t1) * q1 * r1);
        if value > best {
            best = value;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn exact_filter_matches_two_state_recursion_n1() {
        let table = TrueModelTable::default();
        let sigma = 2.0;
        let y: Vec<Vec<f64>> = vec![vec![0.3], vec![-1.0], vec![2.5], vec![0.9]];
        let states = exact_filter(&table, &y, sigma, 1).unwrap();

        // independent closed-form two-state recursion
        let p1_from0 = 0.0050;
        let p1_from1 = 0.9800;
        let mut prev1 = 0.0;
        for (t, yt) in y.iter().enumerate() {
            let pred1 = prev1 * p1_from1 + (1.0 - prev1) * p1_from0;
            let l0 = (-0.5 * (yt[0] / sigma) * (yt[0] / sigma)).exp();
            let l1 = (-0.5 * ((yt[0] - 1.0) / sigma) * ((yt[0] - 1.0) / sigma)).exp();
            let w1 = pred1 * l1;
            let w0 = (1.0 - pred1) * l0;
            prev1 = w1 / (w0 + w1);
            assert_abs_diff_eq!(states[t].marginal_one(0), prev1, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_filter_uninformative_matches_prior_propagation() {
        let table = TrueModelTable::default();
        let n = 6;
        let t_steps = 5;
        let y: Vec<Vec<f64>> = vec![vec![0.5; n]; t_steps];
        let states = exact_filter(&table, &y, 1e6, n).unwrap();

        // prior propagation by direct full-matrix products
        let mut dist = vec![0.0f64; 1 << n];
        dist[0] = 1.0;
        for state in states.iter().take(t_steps) {
            let mut next = vec![0.0f64; 1 << n];
            for (prev, &w) in dist.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let mut pv = BinaryVector::repeat(false, n);
                for b in 0..n {
                    pv.set(b, prev >> b & 1 == 1);
                }
                for (new, slot) in next.iter_mut().enumerate() {
                    let mut nv = BinaryVector::repeat(false, n);
                    for b in 0..n {
                        nv.set(b, new >> b & 1 == 1);
                    }
                    *slot += w * crate::true_process::step_prob(&table, &pv, &nv);
                }
            }
            dist = next;
            for s in 0..1usize << n {
                assert_abs_diff_eq!(state.probs()[s], dist[s], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn exact_filter_single_step_is_direct_bayes() {
        let table = TrueModelTable::default();
        let n = 8;
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
        let states = exact_filter(&table, std::slice::from_ref(&y), 2.0, n).unwrap();

        let zeros = BinaryVector::repeat(false, n);
        let mut expect = vec![0.0f64; 1 << n];
        for (s, e) in expect.iter_mut().enumerate() {
            let mut xv = BinaryVector::repeat(false, n);
            for b in 0..n {
                xv.set(b, s >> b & 1 == 1);
            }
            let mut ll = 0.0;
            for b in 0..n {
                let x = (s >> b & 1) as f64;
                ll += -0.5 * ((y[b] - x) / 2.0) * ((y[b] - x) / 2.0);
            }
            *e = crate::true_process::step_prob(&table, &zeros, &xv) * ll.exp();
        }
        let z: f64 = expect.iter().sum();
        for s in 0..1usize << n {
            assert_abs_diff_eq!(states[0].probs()[s], expect[s] / z, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_filter_rejects_large_n() {
        let table = TrueModelTable::default();
        assert!(matches!(
            exact_filter(&table, &[vec![0.0; 15]], 2.0, 15),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn filter_states_normalized() {
        let table = TrueModelTable::default();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 7;
        let y: Vec<Vec<f64>> = (0..10).map(|_| (0..n).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect()).collect();
        for state in exact_filter(&table, &y, 2.0, n).unwrap() {
            let z: f64 = state.probs().iter().sum();
            assert_abs_diff_eq!(z, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_pushforward_is_prior() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let chain = crate::chain::BinaryMarkovChain::new(
            0.3,
            (0..5).map(|_| [0.2 + 0.6 * rng.random::<f64>(), 0.2 + 0.6 * rng.random::<f64>()]).collect(),
        )
        .unwrap();
        let rule = TransitionRule::identity(&chain);
        let pf = enumerate_pushforward(&rule, &chain).unwrap();
        let law = chain_joint_law(&chain).unwrap();
        for (a, b) in pf.probs.iter().zip(&law) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(pf.expected_unchanged, 6.0, epsilon = 1e-12);
    }

    /// Max deviation between the pushforward's node marginals / consecutive
    /// pair laws and the posterior chain's.
    pub(crate) fn margin_pair_deviation(pf: &[f64], posterior: &BinaryMarkovChain) -> (f64, f64) {
        let n = posterior.len();
        let marg = posterior.marginals();
        let mut dev_m = 0.0f64;
        for (k, m) in marg.iter().enumerate() {
            let pfm: f64 = pf
                .iter()
                .enumerate()
                .filter(|(s, _)| s >> k & 1 == 0)
                .map(|(_, p)| p)
                .sum();
            dev_m = dev_m.max((pfm - m).abs());
        }
        let mut dev_p = 0.0f64;
        for k in 2..=n {
            let f = posterior.pair_joint(k).unwrap();
            for i in 0..2usize {
                for j in 0..2usize {
                    let pfp: f64 = pf
                        .iter()
                        .enumerate()
                        .filter(|(s, _)| (s >> (k - 2) & 1) == i && (s >> (k - 1) & 1) == j)
                        .map(|(_, p)| p)
                        .sum();
                    dev_p = dev_p.max((pfp - f[i][j]).abs());
                }
            }
        }
        (dev_m, dev_p)
    }

    /// The coupling reproduces the posterior chain in its defining data:
    /// every node marginal and every consecutive pair law. The full joint
    /// law is NOT reproduced for n >= 3 (the updated process is not
    /// first-order Markov), which is exercised below.
    #[test]
    fn toy_rule_pushforward_matches_posterior_margins_and_pairs() {
        let prior = toy::prior();
        let posterior = toy::posterior();
        let rule = crate::optimizer::build_optimal_q(&prior, &posterior).unwrap();
        let pf = enumerate_pushforward(&rule, &prior).unwrap();
        let (dev_m, dev_p) = margin_pair_deviation(&pf.probs, &posterior);
        assert!(dev_m <= 1e-10, "marginal deviation {dev_m}");
        assert!(dev_p <= 1e-10, "pair deviation {dev_p}");
        assert_abs_diff_eq!(pf.expected_unchanged, toy::expected::OPTIMAL_VALUE, epsilon = 1e-9);
    }

    #[test]
    fn pushforward_full_joint_exact_for_n2() {
        // with two nodes the pair law IS the joint law, so the pushforward
        // constraint holds in full
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for _ in 0..20 {
            let p = |rng: &mut ChaCha12Rng| 0.05 + 0.9 * rng.random::<f64>();
            let prior =
                crate::chain::BinaryMarkovChain::new(p(&mut rng), vec![[p(&mut rng), p(&mut rng)]]).unwrap();
            let posterior =
                crate::chain::BinaryMarkovChain::new(p(&mut rng), vec![[p(&mut rng), p(&mut rng)]]).unwrap();
            let rule = crate::optimizer::build_optimal_q(&prior, &posterior).unwrap();
            let pf = enumerate_pushforward(&rule, &prior).unwrap();
            let law = chain_joint_law(&posterior).unwrap();
            for (a, b) in pf.probs.iter().zip(&law) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn independent_coupling_closed_form_matches_enumeration() {
        let prior = toy::prior();
        let posterior = toy::posterior();
        let closed = independent_coupling_expected_unchanged(&prior, &posterior);

        // enumerate: q(x̃|x) = f(x̃|y) independent of x
        let prior_law = chain_joint_law(&prior).unwrap();
        let post_law = chain_joint_law(&posterior).unwrap();
        let n = 4;
        let mut expected = 0.0;
        for (x, &fx) in prior_law.iter().enumerate() {
            for (xt, &g) in post_law.iter().enumerate() {
                expected += fx * g * (n - (x ^ xt).count_ones() as usize) as f64;
            }
        }
        assert_abs_diff_eq!(closed, expected, epsilon = 1e-12);
    }

    #[test]
    fn grid_dp_toy_close_to_solver() {
        let prior = toy::prior();
        let posterior = toy::posterior();
        let main = crate::optimizer::build_optimal_q(&prior, &posterior).unwrap();
        let oracle = grid_dp_optimum(&prior, &posterior, 2000).unwrap();
        assert!(oracle <= main.expected_unchanged() + 1e-9);
        assert!(main.expected_unchanged() - oracle <= 5e-3, "gap {}", main.expected_unchanged() - oracle);
    }

    #[test]
    fn grid_dp_identity_is_n() {
        let prior = toy::prior();
        let v = grid_dp_optimum(&prior, &prior, 1000).unwrap();
        assert_abs_diff_eq!(v, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn grid_dp_monotone_in_resolution() {
        let prior = toy::prior();
        let posterior = toy::posterior();
        let coarse = grid_dp_optimum(&prior, &posterior, 1000).unwrap();
        let fine = grid_dp_optimum(&prior, &posterior, 4000).unwrap();
        assert!(fine >= coarse - 1e-9, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn exact_contact_probability_against_sampling() {
        let table = TrueModelTable::default();
        let n = 10;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let y: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0).collect()).collect();
        let state = exact_filter(&table, &y, 2.0, n).unwrap().pop().unwrap();

        // sample states from the exact distribution and compare
        let reps = 200_000;
        let mut counts_cond = 0usize;
        let mut counts_joint = 0usize;
        let (i, j) = (4, 7);
        let span: usize = ((1usize << (j - i + 1)) - 1) << i;
        let cdf: Vec<f64> = state
            .probs()
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        for _ in 0..reps {
            let u = rng.random::<f64>();
            let s = cdf.partition_point(|c| *c < u).min((1 << n) - 1);
            if s >> i & 1 == 1 {
                counts_cond += 1;
                if s & span == span {
                    counts_joint += 1;
                }
            }
        }
        let exact = state.contact_probability(i, j).unwrap();
        let est = counts_joint as f64 / counts_cond as f64;
        let se = (exact * (1.0 - exact) / counts_cond as f64).sqrt();
        assert!((est - exact).abs() <= 3.0 * se + 1e-9, "est {est} exact {exact}");
    }
}
