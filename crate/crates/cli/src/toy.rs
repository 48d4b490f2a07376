//! The worked-example subcommand: builds the length-4 stationary prior,
//! conditions it on the fixed observation vector, constructs the optimal
//! transition rule, verifies the frozen reference outputs and the
//! pushforward constraint, and writes everything as CSV.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use binfilter_core::chain::BinaryMarkovChain;
use binfilter_core::csvfmt::fmt_f64;
use binfilter_core::optimizer::{build_optimal_q_full, TransitionRule};
use binfilter_core::oracle::{chain_joint_law, enumerate_pushforward};
use binfilter_core::toy;

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub posterior: BinaryMarkovChain,
    pub rule: TransitionRule,
    /// Largest absolute deviation of the posterior block (marginals and
    /// transitions) from the frozen reference values.
    pub posterior_dev: f64,
    /// Largest absolute deviation of the realized rule from the frozen
    /// reference table.
    pub table_dev: f64,
    /// Largest deviation of the pushforward's node marginals and
    /// consecutive pair laws from the posterior chain's.
    pub pushforward_dev: f64,
    pub passed: bool,
}

/// Runs the worked example; writes CSVs into `out_dir` when given.
pub fn run_toy(out_dir: Option<&Path>, dump_value_functions: bool) -> anyhow::Result<ToyReport> {
    let prior = toy::prior();
    let posterior = toy::posterior();
    let sol = build_optimal_q_full(&prior, &posterior)?;

    // posterior block deviations
    let marg = posterior.marginals();
    let mut posterior_dev = 0.0f64;
    for (m, e) in marg.iter().zip(toy::expected::POSTERIOR_MARGINAL0) {
        posterior_dev = posterior_dev.max((m - e).abs());
    }
    for (k, (p0g0, p1g1)) in toy::expected::POSTERIOR_TRANS.iter().enumerate() {
        posterior_dev = posterior_dev.max((posterior.p0_given(k + 2, false) - p0g0).abs());
        posterior_dev = posterior_dev.max((1.0 - posterior.p0_given(k + 2, true) - p1g1).abs());
    }

    // transition-rule deviations
    let rule = &sol.rule;
    let mut table_dev = 0.0f64;
    for (t, e) in rule.t_star().iter().zip(toy::expected::T_STAR) {
        table_dev = table_dev.max((t - e).abs());
    }
    table_dev = table_dev.max((rule.first().q0 - toy::expected::Q_FIRST.0).abs());
    table_dev = table_dev.max((rule.first().q1 - toy::expected::Q_FIRST.1).abs());
    for (k, expect) in toy::expected::Q_STEPS.iter().enumerate() {
        let q = rule.step(k + 2);
        for (have, want) in [q.q00, q.q01, q.q10, q.q11].iter().zip(expect) {
            table_dev = table_dev.max((have - want).abs());
        }
    }

    // pushforward constraint: node marginals and consecutive pair laws
    let pf = enumerate_pushforward(rule, &prior)?;
    let mut pushforward_dev = 0.0f64;
    for (k, m) in marg.iter().enumerate() {
        let pfm: f64 = pf
            .probs
            .iter()
            .enumerate()
            .filter(|(s, _)| s >> k & 1 == 0)
            .map(|(_, p)| p)
            .sum();
        pushforward_dev = pushforward_dev.max((pfm - m).abs());
    }
    for k in 2..=4 {
        let f = posterior.pair_joint(k)?;
        for i in 0..2usize {
            for j in 0..2usize {
                let pfp: f64 = pf
                    .probs
                    .iter()
                    .enumerate()
                    .filter(|(s, _)| (s >> (k - 2) & 1) == i && (s >> (k - 1) & 1) == j)
                    .map(|(_, p)| p)
                    .sum();
                pushforward_dev = pushforward_dev.max((pfp - f[i][j]).abs());
            }
        }
    }
    let value_dev = (pf.expected_unchanged - rule.expected_unchanged()).abs();

    let passed = posterior_dev <= 1e-4 && table_dev <= 1e-5 && pushforward_dev <= 1e-10 && value_dev <= 1e-9;

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let write = |name: &str, f: &dyn Fn(&mut BufWriter<fs::File>) -> std::io::Result<()>| -> anyhow::Result<()> {
            let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        };
        write("prior_chain.csv", &|w| prior.write_csv(w))?;
        write("posterior_chain.csv", &|w| posterior.write_csv(w))?;
        write("q_star.csv", &|w| rule.write_csv(w))?;
        write("t_star.csv", &|w| rule.write_t_star_csv(w))?;
        if dump_value_functions {
            for (idx, f) in sol.value_functions.iter().enumerate() {
                write(&format!("value_function_k{}.csv", idx + 2), &|w| f.write_csv(w))?;
            }
        }
        // pushforward next to the check it belongs to
        write("pushforward.csv", &|w| {
            writeln!(w, "state,pushforward,posterior")?;
            let law = chain_joint_law(&posterior).expect("small n");
            for (s, (a, b)) in pf.probs.iter().zip(&law).enumerate() {
                writeln!(w, "{s},{},{}", fmt_f64(*a), fmt_f64(*b))?;
            }
            Ok(())
        })?;
    }

    Ok(ToyReport {
        posterior,
        rule: sol.rule,
        posterior_dev,
        table_dev,
        pushforward_dev,
        passed,
    })
}

/// Human-readable summary printed by the subcommand.
pub fn print_report(report: &ToyReport) {
    println!("posterior chain (zero-transitions and marginals):");
    let marg = report.posterior.marginals();
    for k in 1..=4 {
        if k >= 2 {
            println!(
                "  P(x_{k}=0 | x_{}=0, y) = {:.6}   P(x_{k}=1 | x_{}=1, y) = {:.6}",
                k - 1,
                report.posterior.p0_given(k, false),
                k - 1,
                1.0 - report.posterior.p0_given(k, true),
            );
        }
        println!("  P(x_{k}=0 | y) = {:.6}", marg[k - 1]);
    }
    println!("optimal rule:");
    println!("  k    t*        q00       q01       q10       q11");
    let r = &report.rule;
    println!(
        "  1    {:.6}  {:.6}  {:.6}  (first factor: q_1^0, q_1^1)",
        r.t_star()[0],
        r.first().q0,
        r.first().q1
    );
    for k in 2..=4 {
        let q = r.step(k);
        println!(
            "  {k}    {:.6}  {:.6}  {:.6}  {:.6}  {:.6}",
            r.t_star()[k - 1],
            q.q00,
            q.q01,
            q.q10,
            q.q11
        );
    }
    println!("expected unchanged components: {:.9}", r.expected_unchanged());
    println!(
        "checks: posterior dev {:.2e} (<= 1e-4), rule dev {:.2e} (<= 1e-5), pushforward dev {:.2e} (<= 1e-10): {}",
        report.posterior_dev,
        report.table_dev,
        report.pushforward_dev,
        if report.passed { "PASS" } else { "FAIL" }
    );
}
