//! The `oracle` subcommand: randomized check batteries pitting the main
//! solver against the brute-force references.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use binfilter_core::chain::BinaryMarkovChain;
use binfilter_core::optimizer::build_optimal_q;
use binfilter_core::oracle;
use binfilter_core::rng::{stream, Purpose};
use rand::Rng;
use rayon::prelude::*;

/// One named check with its outcome.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct OracleSuiteReport {
    pub checks: Vec<Check>,
}

impl OracleSuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_chain<R: Rng>(n: usize, rng: &mut R) -> BinaryMarkovChain {
    let p = |rng: &mut R| 0.05 + 0.9 * rng.random::<f64>();
    let trans = (0..n - 1).map(|_| [p(rng), p(rng)]).collect();
    BinaryMarkovChain::new(p(rng), trans).unwrap()
}

/// Max deviation of the pushforward's node marginals and consecutive pair
/// laws from the posterior chain's.
pub fn constraint_deviation(pf: &[f64], posterior: &BinaryMarkovChain) -> f64 {
    let n = posterior.len();
    let marg = posterior.marginals();
    let mut dev = 0.0f64;
    for (k, m) in marg.iter().enumerate() {
        let pfm: f64 = pf.iter().enumerate().filter(|(s, _)| s >> k & 1 == 0).map(|(_, p)| p).sum();
        dev = dev.max((pfm - m).abs());
    }
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
                dev = dev.max((pfp - f[i][j]).abs());
            }
        }
    }
    dev
}

/// Runs the three batteries. Counts are the defaults of the `oracle`
/// subcommand; the seed comes from the configuration.
pub fn run_oracle_suite(seed: u64, constraint_instances: usize, grid_instances: usize, identity_instances: usize) -> OracleSuiteReport {
    let mut checks = Vec::new();

    // battery 1: coupling constraint by exact enumeration
    let constraint_devs: Vec<f64> = (0..constraint_instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i, 1, Purpose::OracleSuite);
            let n = 2 + (rng.random::<u64>() % 7) as usize; // 2..=8
            let prior = random_chain(n, &mut rng);
            let posterior = random_chain(n, &mut rng);
            let rule = build_optimal_q(&prior, &posterior).expect("solver");
            let pf = enumerate(&rule, &prior);
            constraint_deviation(&pf, &posterior)
        })
        .collect();
    let worst = constraint_devs.iter().cloned().fold(0.0f64, f64::max);
    checks.push(Check {
        name: format!("constraint_enumeration_x{constraint_instances}"),
        passed: worst <= 1e-10,
        detail: format!("max marginal/pair deviation {worst:.3e} (tolerance 1e-10)"),
    });

    // battery 2: grid dynamic program comparison
    let grid_gaps: Vec<(f64, f64)> = (0..grid_instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i, 2, Purpose::OracleSuite);
            let n = 2 + (rng.random::<u64>() % 3) as usize; // 2..=4
            let prior = random_chain(n, &mut rng);
            let posterior = random_chain(n, &mut rng);
            let rule = build_optimal_q(&prior, &posterior).expect("solver");
            let grid = oracle::grid_dp_optimum(&prior, &posterior, 2000).expect("grid");
            (grid - rule.expected_unchanged(), rule.expected_unchanged() - grid)
        })
        .collect();
    let max_overshoot = grid_gaps.iter().map(|g| g.0).fold(f64::MIN, f64::max);
    let max_gap = grid_gaps.iter().map(|g| g.1).fold(f64::MIN, f64::max);
    checks.push(Check {
        name: format!("grid_dp_lower_bound_x{grid_instances}"),
        passed: max_overshoot <= 1e-9,
        detail: format!("max oracle - solver = {max_overshoot:.3e} (tolerance 1e-9)"),
    });
    checks.push(Check {
        name: format!("grid_dp_gap_x{grid_instances}"),
        passed: max_gap <= 5e-3,
        detail: format!("max solver - oracle = {max_gap:.3e} (tolerance 5e-3)"),
    });

    // battery 3: identity degeneracy
    let mut identity_ok = true;
    let mut identity_detail = String::from("all exact");
    for i in 0..identity_instances as u64 {
        let mut rng = stream(seed, i, 3, Purpose::OracleSuite);
        let n = 2 + (rng.random::<u64>() % 7) as usize;
        let chain = random_chain(n, &mut rng);
        let rule = build_optimal_q(&chain, &chain).expect("solver");
        let value_ok = (rule.expected_unchanged() - n as f64).abs() <= 1e-10;
        let mut factors_ok = (rule.first().q0 - 1.0).abs() <= 1e-12 && rule.first().q1 <= 1e-12;
        for k in 2..=n {
            let q = rule.step(k);
            factors_ok &= (q.q00 - 1.0).abs() <= 1e-12
                && q.q01 <= 1e-12
                && (q.q10 - 1.0).abs() <= 1e-12
                && q.q11 <= 1e-12;
        }
        if !(value_ok && factors_ok) {
            identity_ok = false;
            identity_detail =
                format!("instance {i} (n = {n}): value {} factors_ok {factors_ok}", rule.expected_unchanged());
            break;
        }
    }
    checks.push(Check {
        name: format!("identity_battery_x{identity_instances}"),
        passed: identity_ok,
        detail: identity_detail,
    });

    OracleSuiteReport { checks }
}

fn enumerate(rule: &binfilter_core::optimizer::TransitionRule, prior: &BinaryMarkovChain) -> Vec<f64> {
    oracle::enumerate_pushforward(rule, prior).expect("small n").probs
}

pub fn write_report_csv(report: &OracleSuiteReport, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("oracle_report.csv"))?);
    writeln!(w, "check,passed,detail")?;
    for c in &report.checks {
        writeln!(w, "{},{},{}", c.name, c.passed, c.detail.replace(',', ";"))?;
    }
    w.flush()?;
    Ok(())
}
