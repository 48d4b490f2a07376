//! Cross-module checks: built rules against the brute-force oracles.

use binfilter_core::chain::BinaryMarkovChain;
use binfilter_core::optimizer::build_optimal_q;
use binfilter_core::oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn random_chain<R: Rng>(n: usize, rng: &mut R) -> BinaryMarkovChain {
    let p = |rng: &mut R| 0.05 + 0.9 * rng.random::<f64>();
    let trans = (0..n - 1).map(|_| [p(rng), p(rng)]).collect();
    BinaryMarkovChain::new(p(rng), trans).unwrap()
}

fn margin_pair_deviation(pf: &[f64], posterior: &BinaryMarkovChain) -> (f64, f64) {
    let n = posterior.len();
    let marg = posterior.marginals();
    let mut dev_m = 0.0f64;
    for (k, m) in marg.iter().enumerate() {
        let pfm: f64 =
            pf.iter().enumerate().filter(|(s, _)| s >> k & 1 == 0).map(|(_, p)| p).sum();
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

#[test]
fn pushforward_reproduces_posterior_margins_and_pairs() {
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    for round in 0..30 {
        let n = 2 + (round % 7);
        let prior = random_chain(n, &mut rng);
        let posterior = random_chain(n, &mut rng);
        let rule = build_optimal_q(&prior, &posterior).unwrap();
        let pf = oracle::enumerate_pushforward(&rule, &prior).unwrap();
        let (dev_m, dev_p) = margin_pair_deviation(&pf.probs, &posterior);
        assert!(dev_m <= 1e-10, "round {round}: marginal deviation {dev_m}");
        assert!(dev_p <= 1e-10, "round {round}: pair deviation {dev_p}");
        let total: f64 = pf.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // forward value bookkeeping agrees with the exact enumeration
        assert!(
            (pf.expected_unchanged - rule.expected_unchanged()).abs() < 1e-9,
            "round {round}: enumerated {} vs dp {}",
            pf.expected_unchanged,
            rule.expected_unchanged()
        );
    }
}

#[test]
fn optimum_dominates_baseline_couplings() {
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    for round in 0..25 {
        let n = 2 + (round % 6);
        let prior = random_chain(n, &mut rng);
        let posterior = random_chain(n, &mut rng);
        let rule = build_optimal_q(&prior, &posterior).unwrap();
        let indep = oracle::independent_coupling_expected_unchanged(&prior, &posterior);
        assert!(
            rule.expected_unchanged() >= indep - 1e-9,
            "round {round}: optimal {} below independent resampling {}",
            rule.expected_unchanged(),
            indep
        );
    }
}

#[test]
fn rule_entries_and_parameters_stay_in_range() {
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    for round in 0..25 {
        let n = 2 + (round % 8);
        let prior = random_chain(n, &mut rng);
        let posterior = random_chain(n, &mut rng);
        let rule = build_optimal_q(&prior, &posterior).unwrap();

        let in01 = |v: f64| (0.0..=1.0).contains(&v);
        assert!(in01(rule.first().q0) && in01(rule.first().q1));
        for k in 2..=n {
            let q = rule.step(k);
            assert!(in01(q.q00) && in01(q.q01) && in01(q.q10) && in01(q.q11));
        }

        let fp = prior.clamped(binfilter_core::optimizer::PROB_CLAMP_EPS).marginals();
        let fq = posterior.clamped(binfilter_core::optimizer::PROB_CLAMP_EPS).marginals();
        for k in 2..=n {
            let tb = binfilter_core::optimizer::t_bounds(fp[k - 1], fq[k - 2]);
            let t = rule.t_star()[k - 1];
            assert!(
                t >= tb.t_min - 1e-10 && t <= tb.t_max + 1e-10,
                "round {round}, k {k}: t {t} outside [{}, {}]",
                tb.t_min,
                tb.t_max
            );
        }
    }
}

#[test]
fn grid_dp_brackets_solver_on_random_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    let mut cases = Vec::new();
    for round in 0..6 {
        let n = 2 + (round % 3);
        cases.push((random_chain(n, &mut rng), random_chain(n, &mut rng)));
    }
    for (prior, posterior) in &cases {
        let rule = build_optimal_q(prior, posterior).unwrap();
        let grid = oracle::grid_dp_optimum(prior, posterior, 2000).unwrap();
        assert!(
            grid <= rule.expected_unchanged() + 1e-9,
            "grid {} exceeds solver {}",
            grid,
            rule.expected_unchanged()
        );
        assert!(
            rule.expected_unchanged() - grid <= 5e-3,
            "gap {} too large",
            rule.expected_unchanged() - grid
        );
    }
}
