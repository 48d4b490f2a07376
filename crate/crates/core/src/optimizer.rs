//! Optimal per-step couplings between a prior chain and a posterior chain.
//!
//! Given a prior chain `f(x)` and the matching posterior chain `f(x|y)`,
//! this module constructs the factorized updating distribution
//! `q(x̃ | x, y)` that maximises the expected number of components left
//! unchanged, subject to the pushforward of `f(x)` through `q` being exactly
//! `f(x|y)`.
//!
//! The construction is a backward recursion over value functions
//! `E*_{k:n}(t_k)` of a scalar pair-probability parameter `t_k`, each step a
//! parametric piecewise-linear program solved piece by piece as a
//! two-variable linear program, followed by a forward pass that realizes
//! the concrete parameters `t_k*` and recovers the optimal factors.

use std::io::{self, Write};

use crate::chain::BinaryMarkovChain;
use crate::cpl::CplFunction;
use crate::csvfmt::fmt_f64;
use crate::error::{Error, Result};

/// Chains fed to the optimizer are clamped into `[eps, 1-eps]`. Estimated
/// chains are strictly interior already; the clamp only affects hand-built
/// degenerate inputs.
pub const PROB_CLAMP_EPS: f64 = 1e-9;

/// Below this a pair probability is treated as zero: the conditional it
/// weights is never sampled, the corner formulas dividing by it are skipped.
const PI_GUARD: f64 = 1e-14;

/// LP feasibility tolerance.
const FEAS_TOL: f64 = 1e-10;

/// Candidate breakpoints closer than this are merged.
const BP_DEDUP_TOL: f64 = 1e-12;

/// Domains narrower than this are treated as width-zero (single point).
const WIDTH0_TOL: f64 = 1e-15;

// ---------------------------------------------------------------------------
// Pair-law parametrisation
// ---------------------------------------------------------------------------

/// Fréchet bounds of the free pair parameter `t_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TBounds {
    pub t_min: f64,
    pub t_max: f64,
}

/// Bounds of `t_k` given the prior zero-marginal at node `k` and the
/// posterior zero-marginal at node `k-1`.
pub fn t_bounds(prior_marg0_k: f64, post_marg0_km1: f64) -> TBounds {
    TBounds {
        t_min: (prior_marg0_k + post_marg0_km1 - 1.0).max(0.0),
        t_max: prior_marg0_k.min(post_marg0_km1),
    }
}

/// The pair law of `(x̃_{k-1}, x_k)`, parametrised by its `(0,0)` entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiTable {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

/// Pair law at parameter `t`; errors if `t` lies outside the Fréchet bounds
/// by more than `1e-12`. Entries are clamped to be nonnegative.
pub fn pi_from_t(t: f64, prior_marg0_k: f64, post_marg0_km1: f64) -> Result<PiTable> {
    let tb = t_bounds(prior_marg0_k, post_marg0_km1);
    if !t.is_finite() || t < tb.t_min - 1e-12 || t > tb.t_max + 1e-12 {
        return Err(Error::OutOfDomain { t, lo: tb.t_min, hi: tb.t_max });
    }
    let t = t.clamp(tb.t_min, tb.t_max);
    let clamp0 = |v: f64| if v < 0.0 { 0.0 } else { v };
    Ok(PiTable {
        p00: clamp0(t),
        p01: clamp0(post_marg0_km1 - t),
        p10: clamp0(prior_marg0_k - t),
        p11: clamp0(1.0 - prior_marg0_k - post_marg0_km1 + t),
    })
}

// ---------------------------------------------------------------------------
// Coupling factors
// ---------------------------------------------------------------------------

/// First factor: probability that `x̃_1 = 0` given `x_1 = 0` resp. `1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QFirst {
    pub q0: f64,
    pub q1: f64,
}

impl QFirst {
    /// Probability that `x̃_1 = 0` given `x_1`.
    pub fn prob_zero(&self, x1: bool) -> f64 {
        if x1 {
            self.q1
        } else {
            self.q0
        }
    }
}

/// Later factor: probability that `x̃_k = 0` given `(x̃_{k-1}, x_k) = (i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QStep {
    pub q00: f64,
    pub q01: f64,
    pub q10: f64,
    pub q11: f64,
}

impl QStep {
    pub fn identity() -> Self {
        Self { q00: 1.0, q01: 0.0, q10: 1.0, q11: 0.0 }
    }

    /// Probability that `x̃_k = 0` given `x̃_{k-1} = prev_tilde`, `x_k = cur`.
    pub fn prob_zero(&self, prev_tilde: bool, cur: bool) -> f64 {
        match (prev_tilde, cur) {
            (false, false) => self.q00,
            (false, true) => self.q01,
            (true, false) => self.q10,
            (true, true) => self.q11,
        }
    }
}

/// Advances the pair parameter one node: the `(0,0)` probability of the next
/// pair `(x̃_k, x_{k+1})` given the current pair law, the factor `q_k`, and
/// the prior transitions `rho0gJ = P(x_{k+1}=0 | x_k = J)`.
pub fn t_next(q: &QStep, rho0g0: f64, rho0g1: f64, pi: &PiTable) -> f64 {
    pi.p00 * q.q00 * rho0g0
        + pi.p01 * q.q01 * rho0g1
        + pi.p10 * q.q10 * rho0g0
        + pi.p11 * q.q11 * rho0g1
}

/// First-step variant: the pair law of `(x̃_0, x_1)` degenerates to
/// `(t_1, 0, 1 - t_1, 0)`, leaving `t_2 = t_1 q_1^0 rho + (1-t_1) q_1^1 rho'`.
pub fn t_next_first(t1: f64, q: &QFirst, rho0g0: f64, rho0g1: f64) -> f64 {
    t1 * q.q0 * rho0g0 + (1.0 - t1) * q.q1 * rho0g1
}

/// Expected contribution of node `k >= 2`: P(x_k = x̃_k) under the pair law
/// `pi` and factor `q`, where `prior_marg0_k = P(x_k = 0)`.
pub fn step_unchanged_expectation(pi: &PiTable, q: &QStep, prior_marg0_k: f64) -> f64 {
    pi.p00 * q.q00 - pi.p01 * q.q01 + pi.p10 * q.q10 - pi.p11 * q.q11 + (1.0 - prior_marg0_k)
}

/// Expected contribution of node 1: P(x_1 = x̃_1).
pub fn first_unchanged_expectation(t1: f64, q: &QFirst) -> f64 {
    t1 * q.q0 + (1.0 - t1) * (1.0 - q.q1)
}

// ---------------------------------------------------------------------------
// Two-variable linear program
// ---------------------------------------------------------------------------

/// Maximise `c00 q00 + c10 q10 + constant` over a box, subject to a band
/// `band_lo <= w00 q00 + w10 q10 + w_const <= band_hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoVarLpProblem {
    pub c00: f64,
    pub c10: f64,
    pub constant: f64,
    /// `(lo, hi)` bounds for `q00`.
    pub box00: (f64, f64),
    /// `(lo, hi)` bounds for `q10`.
    pub box10: (f64, f64),
    pub w00: f64,
    pub w10: f64,
    pub w_const: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpSolution {
    pub q00: f64,
    pub q10: f64,
    pub value: f64,
    /// Set when the maximum is attained along a whole edge (the objective
    /// gradient is parallel to an active band line); the returned vertex is
    /// then the lexicographically largest `(q00, q10)`.
    pub edge_tie: bool,
}

/// Solves the program by enumerating candidate vertices: the four box
/// corners plus the intersections of the two band lines with the four box
/// edges. The feasible region is a polygon with at most six corners; the
/// maximiser is one of them.
pub fn solve_two_var_lp(p: &TwoVarLpProblem) -> Result<LpSolution> {
    let (l0, h0) = p.box00;
    let (l1, h1) = p.box10;
    if !(l0 <= h0 + FEAS_TOL && l1 <= h1 + FEAS_TOL) {
        return Err(Error::InfeasibleSubproblem);
    }

    let mut cands: Vec<(f64, f64)> =
        vec![(l0, l1), (l0, h1), (h0, l1), (h0, h1)];
    if p.w00.abs() + p.w10.abs() > 1e-14 {
        for band_val in [p.band_lo, p.band_hi] {
            let c = band_val - p.w_const;
            if p.w10.abs() > 1e-14 {
                for u in [l0, h0] {
                    cands.push((u, (c - p.w00 * u) / p.w10));
                }
            }
            if p.w00.abs() > 1e-14 {
                for v in [l1, h1] {
                    cands.push(((c - p.w10 * v) / p.w00, v));
                }
            }
        }
    } else if p.w_const < p.band_lo - FEAS_TOL || p.w_const > p.band_hi + FEAS_TOL {
        // degenerate band: no dependence on q, constraint decided outright
        return Err(Error::InfeasibleSubproblem);
    }

    let feasible = |u: f64, v: f64| {
        u >= l0 - FEAS_TOL
            && u <= h0 + FEAS_TOL
            && v >= l1 - FEAS_TOL
            && v <= h1 + FEAS_TOL
            && {
                let b = p.w00 * u + p.w10 * v + p.w_const;
                b >= p.band_lo - FEAS_TOL && b <= p.band_hi + FEAS_TOL
            }
    };

    let mut best: Option<(f64, f64, f64)> = None; // (value, u, v)
    let mut tied_distinct = false;
    for &(u, v) in &cands {
        if !u.is_finite() || !v.is_finite() || !feasible(u, v) {
            continue;
        }
        let value = p.c00 * u + p.c10 * v + p.constant;
        match best {
            None => best = Some((value, u, v)),
            Some((bv, bu, bvv)) => {
                let tie_tol = 1e-12 * bv.abs().max(1.0);
                if value > bv + tie_tol {
                    best = Some((value, u, v));
                    tied_distinct = false;
                } else if value >= bv - tie_tol {
                    let distinct = (u - bu).abs() > 1e-9 || (v - bvv).abs() > 1e-9;
                    if distinct {
                        tied_distinct = true;
                    }
                    if (u, v) > (bu, bvv) {
                        best = Some((bv.max(value), u, v));
                    }
                }
            }
        }
    }
    match best {
        Some((value, u, v)) => Ok(LpSolution {
            q00: u.clamp(l0.max(0.0), h0.min(1.0)).clamp(0.0, 1.0),
            q10: v.clamp(l1.max(0.0), h1.min(1.0)).clamp(0.0, 1.0),
            value,
            edge_tie: tied_distinct,
        }),
        None => Err(Error::InfeasibleSubproblem),
    }
}

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

/// Everything the backward/forward recursions need, precomputed from the
/// (clamped) prior and posterior chains. Node indices are 1-based to match
/// the recursion; accessors translate.
#[derive(Debug, Clone)]
pub struct CouplingData {
    n: usize,
    /// Prior zero-marginals, `fp[k-1] = P(x_k = 0)`.
    fp: Vec<f64>,
    /// Posterior zero-marginals, `fq[k-1] = P(x_k = 0 | y)`.
    fq: Vec<f64>,
    /// Posterior pair entries `f_k^{00}`, index `k-2`.
    f00: Vec<f64>,
    /// Posterior pair entries `f_k^{10}`, index `k-2`.
    f10: Vec<f64>,
    /// Prior transitions `rho_k^{0|0} = P(x_{k+1}=0 | x_k=0)`, index `k-1`.
    rho00: Vec<f64>,
    /// Prior transitions `rho_k^{0|1}`, index `k-1`.
    rho01: Vec<f64>,
}

impl CouplingData {
    /// Precomputes marginals, pair entries and transitions after clamping
    /// both chains into `[PROB_CLAMP_EPS, 1 - PROB_CLAMP_EPS]`.
    pub fn new(prior: &BinaryMarkovChain, posterior: &BinaryMarkovChain) -> Result<Self> {
        if prior.len() != posterior.len() {
            return Err(Error::LengthMismatch { left: prior.len(), right: posterior.len() });
        }
        let n = prior.len();
        if n < 2 {
            return Err(Error::InvalidInput("coupling needs chain length >= 2".into()));
        }
        let prior = prior.clamped(PROB_CLAMP_EPS);
        let posterior = posterior.clamped(PROB_CLAMP_EPS);

        let fp = prior.marginals();
        // posterior marginals built from the pair entries so that
        // fq[k-1] == f00[k-2] + f10[k-2] holds to the last bit
        let mut fq = Vec::with_capacity(n);
        let mut f00 = Vec::with_capacity(n - 1);
        let mut f10 = Vec::with_capacity(n - 1);
        fq.push(posterior.init0());
        for k in 2..=n {
            let m = fq[k - 2];
            let a = m * posterior.p0_given(k, false);
            let b = (1.0 - m) * posterior.p0_given(k, true);
            f00.push(a);
            f10.push(b);
            fq.push(a + b);
        }
        let rho00 = (1..n).map(|k| prior.p0_given(k + 1, false)).collect();
        let rho01 = (1..n).map(|k| prior.p0_given(k + 1, true)).collect();
        Ok(Self { n, fp, fq, f00, f10, rho00, rho01 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// P(x_k = 0) under the prior, `k = 1..=n`.
    pub fn prior_marg0(&self, k: usize) -> f64 {
        self.fp[k - 1]
    }

    /// P(x_k = 0 | y) under the posterior, `k = 1..=n`.
    pub fn post_marg0(&self, k: usize) -> f64 {
        self.fq[k - 1]
    }

    /// Posterior pair entry `f_k^{00} = P(x_{k-1}=0, x_k=0 | y)`, `k = 2..=n`.
    pub fn f00(&self, k: usize) -> f64 {
        self.f00[k - 2]
    }

    /// Posterior pair entry `f_k^{10}`, `k = 2..=n`.
    pub fn f10(&self, k: usize) -> f64 {
        self.f10[k - 2]
    }

    /// Prior transition `P(x_{k+1} = 0 | x_k = 0)`, `k = 1..=n-1`.
    pub fn rho00(&self, k: usize) -> f64 {
        self.rho00[k - 1]
    }

    /// Prior transition `P(x_{k+1} = 0 | x_k = 1)`, `k = 1..=n-1`.
    pub fn rho01(&self, k: usize) -> f64 {
        self.rho01[k - 1]
    }

    /// Fréchet bounds of `t_k`, `k = 2..=n`.
    pub fn t_bounds_at(&self, k: usize) -> TBounds {
        t_bounds(self.prior_marg0(k), self.post_marg0(k - 1))
    }

    fn pi_at(&self, k: usize, t: f64) -> Result<PiTable> {
        pi_from_t(t, self.prior_marg0(k), self.post_marg0(k - 1))
    }
}

/// Box bounds for `(q00, q10)` after eliminating `q01, q11` through the
/// equality constraints. `None` means the equalities are unsatisfiable,
/// which cannot happen for pair entries consistent with the margins.
fn box_bounds(pi: &PiTable, f00: f64, f10: f64) -> Option<((f64, f64), (f64, f64))> {
    let axis = |p_own: f64, p_other: f64, target: f64| -> Option<(f64, f64)> {
        if p_own > PI_GUARD {
            let lo = ((target - p_other) / p_own).max(0.0);
            let hi = (target / p_own).min(1.0);
            if lo > hi + FEAS_TOL {
                return None;
            }
            Some((lo.min(hi), hi))
        } else if target > p_other + FEAS_TOL {
            None
        } else {
            // conditioning event has probability ~0; variable is free
            Some((0.0, 1.0))
        }
    };
    Some((axis(pi.p00, pi.p01, f00)?, axis(pi.p10, pi.p11, f10)?))
}

// ---------------------------------------------------------------------------
// Backward recursion
// ---------------------------------------------------------------------------

/// Value function `E*_n(t_n)` of the last node, in closed form: the optimal
/// `q_n^{00}, q_n^{10}` sit at their upper box bounds, giving
/// `E*_n(t) = 2 min(t, f00) + 2 min(fp_n - t, f10) + c_n` with at most three
/// pieces of slope -2, 0 or 2.
pub fn solve_final_step(data: &CouplingData) -> Result<CplFunction> {
    let n = data.n;
    let tb = data.t_bounds_at(n);
    let f00 = data.f00(n);
    let f10 = data.f10(n);
    let fpn = data.prior_marg0(n);
    let c_n = (1.0 - fpn) - data.post_marg0(n);
    let value = |t: f64| 2.0 * t.min(f00) + 2.0 * (fpn - t).min(f10) + c_n;

    if tb.t_max - tb.t_min <= WIDTH0_TOL {
        return CplFunction::point(tb.t_min, value(tb.t_min));
    }
    let mut bps = vec![tb.t_min, tb.t_max];
    for x in [f00, fpn - f10] {
        if x > tb.t_min && x < tb.t_max {
            bps.push(x);
        }
    }
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let vals: Vec<f64> = bps.iter().map(|&t| value(t)).collect();
    CplFunction::from_samples(&bps, &vals)
}

/// A solved per-step program at one concrete parameter value.
#[derive(Debug, Clone, Copy)]
struct StepSolve {
    value: f64,
    q: QStep,
    q00_raw: f64,
    q10_raw: f64,
    edge_tie: bool,
}

/// Solves the step-`k` program at a fixed `t` by iterating over the pieces
/// of `E*_{(k+1):n}`, solving the two-variable LP of each piece, and taking
/// the best feasible solution.
fn solve_at_t(data: &CouplingData, k: usize, e_next: &CplFunction, t: f64) -> Result<StepSolve> {
    let pi = data.pi_at(k, t)?;
    let f00 = data.f00(k);
    let f10 = data.f10(k);
    let (box00, box10) =
        box_bounds(&pi, f00, f10).ok_or(Error::InconsistentChains { k, t })?;
    let rd = data.rho00(k) - data.rho01(k);
    let w_const = data.post_marg0(k) * data.rho01(k);
    let c_base = (1.0 - data.prior_marg0(k)) - data.post_marg0(k);

    let mut best: Option<LpSolution> = None;
    for seg in e_next.segments() {
        let beta = 2.0 + seg.slope * rd;
        let problem = TwoVarLpProblem {
            c00: if pi.p00 > PI_GUARD { beta * pi.p00 } else { 0.0 },
            c10: if pi.p10 > PI_GUARD { beta * pi.p10 } else { 0.0 },
            constant: seg.intercept + c_base + seg.slope * w_const,
            box00,
            box10,
            w00: rd * pi.p00,
            w10: rd * pi.p10,
            w_const,
            band_lo: seg.lo,
            band_hi: seg.hi,
        };
        let sol = match solve_two_var_lp(&problem) {
            Ok(sol) => sol,
            Err(Error::InfeasibleSubproblem) => continue,
            Err(e) => return Err(e),
        };
        let better = match &best {
            None => true,
            Some(b) => {
                let tie_tol = 1e-12 * b.value.abs().max(1.0);
                sol.value > b.value + tie_tol
                    || (sol.value >= b.value - tie_tol && (sol.q00, sol.q10) > (b.q00, b.q10))
            }
        };
        if better {
            let edge = sol.edge_tie || best.as_ref().is_some_and(|b| b.edge_tie);
            best = Some(LpSolution { edge_tie: edge, ..sol });
        }
    }
    let sol = best.ok_or(Error::InconsistentChains { k, t })?;

    // recover the eliminated conditionals; zero-probability conditioning
    // keeps the identity convention (q = 1 when x_k = 0, else 0)
    let q00 = if pi.p00 > PI_GUARD { sol.q00 } else { 1.0 };
    let q10 = if pi.p10 > PI_GUARD { sol.q10 } else { 1.0 };
    let q01 =
        if pi.p01 > PI_GUARD { ((f00 - pi.p00 * q00) / pi.p01).clamp(0.0, 1.0) } else { 0.0 };
    let q11 =
        if pi.p11 > PI_GUARD { ((f10 - pi.p10 * q10) / pi.p11).clamp(0.0, 1.0) } else { 0.0 };
    Ok(StepSolve {
        value: sol.value,
        q: QStep { q00, q01, q10, q11 },
        q00_raw: sol.q00,
        q10_raw: sol.q10,
        edge_tie: sol.edge_tie,
    })
}

/// Superset of the breakpoints of `E*_{k:n}`: the domain endpoints, every
/// parameter value where a box-corner coordinate formula changes branch,
/// and every value where a box corner crosses a band line belonging to a
/// breakpoint of `E*_{(k+1):n}`. All corner products are piecewise linear in
/// `t`, so the crossings are roots of linear equations per branch.
pub fn candidate_breakpoints(data: &CouplingData, k: usize, e_next: &CplFunction) -> Vec<f64> {
    let tb = data.t_bounds_at(k);
    let (lo, hi) = (tb.t_min, tb.t_max);
    let f00 = data.f00(k);
    let f10 = data.f10(k);
    let fpk = data.prior_marg0(k);
    let fqm = data.post_marg0(k - 1);
    let rd = data.rho00(k) - data.rho01(k);
    let w_const = data.post_marg0(k) * data.rho01(k);

    let mut out = vec![lo, hi];
    let branch = [f00, fpk - f10, fqm - f00, f10 + fpk + fqm - 1.0];
    for x in branch {
        if x > lo && x < hi {
            out.push(x);
        }
    }

    // corner products: s-contribution of each potentially optimal corner
    let upper00 = move |t: f64| t.min(f00);
    let lower00 = move |t: f64| (f00 - (fqm - t)).max(0.0);
    let upper10 = move |t: f64| (fpk - t).min(f10);
    let lower10 = move |t: f64| (f10 - (1.0 - fpk - fqm + t)).max(0.0);
    let corners: [&dyn Fn(f64) -> f64; 4] = [
        &|t| upper00(t) + upper10(t),
        &|t| upper00(t) + lower10(t),
        &|t| lower00(t) + upper10(t),
        &|t| lower00(t) + lower10(t),
    ];

    if rd.abs() > 1e-14 {
        // nodes where some corner product changes branch
        let mut nodes = vec![lo, hi];
        for x in branch {
            if x > lo && x < hi {
                nodes.push(x);
            }
        }
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup_by(|a, b| (*a - *b).abs() <= BP_DEDUP_TOL);

        for corner in corners {
            for pair in nodes.windows(2) {
                let (ta, tz) = (pair[0], pair[1]);
                let ga = rd * corner(ta) + w_const;
                let gz = rd * corner(tz) + w_const;
                if (gz - ga).abs() <= 1e-15 {
                    continue;
                }
                for &c in e_next.breakpoints() {
                    let frac = (c - ga) / (gz - ga);
                    if (-1e-12..=1.0 + 1e-12).contains(&frac) {
                        out.push((ta + frac * (tz - ta)).clamp(lo, hi));
                    }
                }
            }
        }
    }

    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() <= BP_DEDUP_TOL);
    out
}

/// Value function `E*_{k:n}` for an intermediate node `2 <= k <= n-1`:
/// solves the per-piece programs at every candidate breakpoint and
/// assembles the continuous piecewise-linear upper envelope.
pub fn solve_intermediate_step(
    data: &CouplingData,
    k: usize,
    e_next: &CplFunction,
) -> Result<CplFunction> {
    let tb = data.t_bounds_at(k);
    if tb.t_max - tb.t_min <= WIDTH0_TOL {
        let sol = solve_at_t(data, k, e_next, tb.t_min)?;
        return CplFunction::point(tb.t_min, sol.value);
    }
    let cands = candidate_breakpoints(data, k, e_next);
    let mut vals = Vec::with_capacity(cands.len());
    for &t in &cands {
        vals.push(solve_at_t(data, k, e_next, t)?.value);
    }
    CplFunction::from_samples(&cands, &vals)
}

/// Final backward step: the program in `(q_1^0, q_1^1)` with the marginal
/// equality `f(x̃_1=0|y) = t_1 q_1^0 + (1-t_1) q_1^1` eliminated by
/// substitution, leaving a one-variable LP per piece of `E*_{2:n}`. Returns
/// the optimal value `E*_{1:n}(t_1)` and the optimal first factor.
pub fn solve_first_step(data: &CouplingData, e2: &CplFunction) -> Result<(f64, QFirst)> {
    let t1 = data.prior_marg0(1);
    let fq1 = data.post_marg0(1);
    let rd = data.rho00(1) - data.rho01(1);
    let w_const = fq1 * data.rho01(1);

    // s = t_1 q_1^0 = P(x_1 = 0, x̃_1 = 0)
    let s_lo = (fq1 - (1.0 - t1)).max(0.0);
    let s_hi = t1.min(fq1);

    let mut best: Option<(f64, f64)> = None; // (value, s)
    for seg in e2.segments() {
        let coeff = 2.0 + seg.slope * rd;
        let cons = (1.0 - t1) - fq1 + seg.intercept + seg.slope * w_const;
        let (mut lo, mut hi) = (s_lo, s_hi);
        if rd.abs() > 1e-14 {
            let (a, b) = ((seg.lo - w_const) / rd, (seg.hi - w_const) / rd);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        } else if w_const < seg.lo - FEAS_TOL || w_const > seg.hi + FEAS_TOL {
            continue;
        }
        if lo > hi + FEAS_TOL {
            continue;
        }
        let hi = hi.max(lo);
        for s in [lo, hi] {
            let value = coeff * s + cons;
            let better = match best {
                None => true,
                Some((bv, bs)) => {
                    let tie_tol = 1e-12 * bv.abs().max(1.0);
                    value > bv + tie_tol || (value >= bv - tie_tol && s > bs)
                }
            };
            if better {
                best = Some((value, s));
            }
        }
    }
    let (value, s) = best.ok_or(Error::InconsistentChains { k: 1, t: t1 })?;
    let q = QFirst {
        q0: (s / t1).clamp(0.0, 1.0),
        q1: ((fq1 - s) / (1.0 - t1)).clamp(0.0, 1.0),
    };
    Ok((value, q))
}

// ---------------------------------------------------------------------------
// Transition rule and the full backward/forward driver
// ---------------------------------------------------------------------------

/// Counters recorded while building one rule.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DpDiagnostics {
    /// Largest piece count among the value functions `E*_{k:n}`.
    pub max_pieces: usize,
    /// Sum of piece counts (for averaging).
    pub piece_count_sum: usize,
    /// Number of value functions built.
    pub value_function_count: usize,
    /// Forward steps where the LP optimum coincided with the upper-corner
    /// closed forms, and where it did not. The upper-corner forms are
    /// conjectured but not proved optimal at intermediate steps; the LP
    /// path stays authoritative and this pair just records the score.
    pub upper_corner_agree: usize,
    pub upper_corner_disagree: usize,
    /// Forward steps whose optimum was a whole edge.
    pub edge_ties: usize,
}

impl DpDiagnostics {
    pub fn merge(&mut self, other: &DpDiagnostics) {
        self.max_pieces = self.max_pieces.max(other.max_pieces);
        self.piece_count_sum += other.piece_count_sum;
        self.value_function_count += other.value_function_count;
        self.upper_corner_agree += other.upper_corner_agree;
        self.upper_corner_disagree += other.upper_corner_disagree;
        self.edge_ties += other.edge_ties;
    }

    pub fn mean_pieces(&self) -> f64 {
        if self.value_function_count == 0 {
            0.0
        } else {
            self.piece_count_sum as f64 / self.value_function_count as f64
        }
    }
}

/// The factorized coupling `q(x̃ | x, y)` realized at the optimal
/// parameters, plus the realized parameters and bookkeeping values.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRule {
    n: usize,
    first: QFirst,
    /// Factors for nodes `k = 2..=n`, index `k-2`.
    steps: Vec<QStep>,
    /// Realized parameters `t_1*..t_n*`.
    t_star: Vec<f64>,
    /// `E*_{1:n}(t_1)` from the backward recursion.
    optimal_value: f64,
    /// Telescoped per-step expectations of the forward pass; equals
    /// `optimal_value` up to accumulated rounding.
    realized_value: f64,
    diagnostics: DpDiagnostics,
}

impl TransitionRule {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn first(&self) -> &QFirst {
        &self.first
    }

    /// Factor for node `k = 2..=n`.
    pub fn step(&self, k: usize) -> &QStep {
        &self.steps[k - 2]
    }

    pub fn steps(&self) -> &[QStep] {
        &self.steps
    }

    pub fn t_star(&self) -> &[f64] {
        &self.t_star
    }

    /// Optimal expected number of unchanged components.
    pub fn expected_unchanged(&self) -> f64 {
        self.optimal_value
    }

    pub fn realized_value(&self) -> f64 {
        self.realized_value
    }

    pub fn diagnostics(&self) -> &DpDiagnostics {
        &self.diagnostics
    }

    /// The deterministic identity rule for a given prior chain (what the
    /// optimizer returns when prior and posterior coincide).
    pub fn identity(prior: &BinaryMarkovChain) -> Self {
        let n = prior.len();
        let marg = prior.marginals();
        let mut t_star = vec![marg[0]];
        for k in 2..=n {
            let f = prior.pair_joint(k).unwrap();
            t_star.push(f[0][0]);
        }
        Self {
            n,
            first: QFirst { q0: 1.0, q1: 0.0 },
            steps: vec![QStep::identity(); n - 1],
            t_star,
            optimal_value: n as f64,
            realized_value: n as f64,
            diagnostics: DpDiagnostics::default(),
        }
    }

    /// CSV serialization: `k,q00,q01,q10,q11`; row `k=1` carries the first
    /// factor in the first two columns, rest empty.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "k,q00,q01,q10,q11")?;
        writeln!(w, "1,{},{},,", fmt_f64(self.first.q0), fmt_f64(self.first.q1))?;
        for (idx, q) in self.steps.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                idx + 2,
                fmt_f64(q.q00),
                fmt_f64(q.q01),
                fmt_f64(q.q10),
                fmt_f64(q.q11)
            )?;
        }
        Ok(())
    }

    /// CSV dump of the realized parameters: `k,t_star`.
    pub fn write_t_star_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "k,t_star")?;
        for (idx, t) in self.t_star.iter().enumerate() {
            writeln!(w, "{},{}", idx + 1, fmt_f64(*t))?;
        }
        Ok(())
    }
}

/// A built rule together with the backward value functions
/// (`value_functions[k - 2]` is `E*_{k:n}` for `k = 2..=n`).
#[derive(Debug, Clone)]
pub struct DpSolution {
    pub rule: TransitionRule,
    pub value_functions: Vec<CplFunction>,
}

/// Builds the optimal coupling for the given prior and posterior chains.
pub fn build_optimal_q(
    prior: &BinaryMarkovChain,
    posterior: &BinaryMarkovChain,
) -> Result<TransitionRule> {
    Ok(build_optimal_q_full(prior, posterior)?.rule)
}

/// As [`build_optimal_q`], also returning the backward value functions for
/// dumping and for breakpoint-integrity checks.
pub fn build_optimal_q_full(
    prior: &BinaryMarkovChain,
    posterior: &BinaryMarkovChain,
) -> Result<DpSolution> {
    let data = CouplingData::new(prior, posterior)?;
    let n = data.n();

    // backward pass: E*_{k:n} for k = n, n-1, ..., 2
    let mut funcs: Vec<Option<CplFunction>> = vec![None; n - 1];
    funcs[n - 2] = Some(solve_final_step(&data)?);
    for k in (2..n).rev() {
        let next = funcs[k - 1].take().unwrap();
        funcs[k - 2] = Some(solve_intermediate_step(&data, k, &next)?);
        funcs[k - 1] = Some(next);
    }
    let value_functions: Vec<CplFunction> = funcs.into_iter().map(Option::unwrap).collect();

    let mut diagnostics = DpDiagnostics::default();
    for f in &value_functions {
        let pieces = f.num_pieces().max(1);
        diagnostics.max_pieces = diagnostics.max_pieces.max(pieces);
        diagnostics.piece_count_sum += pieces;
        diagnostics.value_function_count += 1;
    }

    let (optimal_value, first) = solve_first_step(&data, &value_functions[0])?;

    // forward pass
    let t1 = data.prior_marg0(1);
    let mut t_star = Vec::with_capacity(n);
    t_star.push(t1);
    let mut realized = first_unchanged_expectation(t1, &first);
    let mut t = t_next_first(t1, &first, data.rho00(1), data.rho01(1));
    let mut steps = Vec::with_capacity(n - 1);
    for k in 2..=n {
        t_star.push(t);
        let pi = data.pi_at(k, t)?;
        let f00 = data.f00(k);
        let f10 = data.f10(k);
        let q = if k < n {
            let sol = solve_at_t(&data, k, &value_functions[k - 1], t)?;
            diagnostics.edge_ties += sol.edge_tie as usize;
            let u00 = if pi.p00 > PI_GUARD { (f00 / pi.p00).min(1.0) } else { 1.0 };
            let u10 = if pi.p10 > PI_GUARD { (f10 / pi.p10).min(1.0) } else { 1.0 };
            if (sol.q00_raw - u00).abs() <= 1e-9 && (sol.q10_raw - u10).abs() <= 1e-9 {
                diagnostics.upper_corner_agree += 1;
            } else {
                diagnostics.upper_corner_disagree += 1;
            }
            sol.q
        } else {
            // closed-form upper corner of the final step
            let q00 = if pi.p00 > PI_GUARD { (f00 / pi.p00).min(1.0) } else { 1.0 };
            let q10 = if pi.p10 > PI_GUARD { (f10 / pi.p10).min(1.0) } else { 1.0 };
            let q01 = if pi.p01 > PI_GUARD {
                ((f00 - pi.p00 * q00) / pi.p01).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q11 = if pi.p11 > PI_GUARD {
                ((f10 - pi.p10 * q10) / pi.p11).clamp(0.0, 1.0)
            } else {
                0.0
            };
            QStep { q00, q01, q10, q11 }
        };
        realized += step_unchanged_expectation(&pi, &q, data.prior_marg0(k));
        if k < n {
            t = t_next(&q, data.rho00(k), data.rho01(k), &pi);
        }
        steps.push(q);
    }

    Ok(DpSolution {
        rule: TransitionRule {
            n,
            first,
            steps,
            t_star,
            optimal_value,
            realized_value: realized,
            diagnostics,
        },
        value_functions,
    })
}

/// Re-solves the step-`k` program at an arbitrary parameter value; used to
/// verify that the assembled value functions interpolate the program they
/// were built from.
pub fn resolve_value_at(
    data: &CouplingData,
    k: usize,
    e_next: &CplFunction,
    t: f64,
) -> Result<f64> {
    Ok(solve_at_t(data, k, e_next, t)?.value)
}
