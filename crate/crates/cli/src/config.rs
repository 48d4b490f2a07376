//! Experiment configuration: a flat `key = value` text file plus
//! command-line `--set KEY=VAL` overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use binfilter_core::error::{Error, Result};
use serde::Serialize;

/// Which update methods an experiment runs. `exact` is the brute-force
/// reference filter and requires a small state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MethodSet {
    pub proposed: bool,
    pub assumed: bool,
    pub exact: bool,
}

impl Default for MethodSet {
    fn default() -> Self {
        Self { proposed: true, assumed: true, exact: false }
    }
}

impl MethodSet {
    fn parse(s: &str) -> Result<Self> {
        let mut set = Self { proposed: false, assumed: false, exact: false };
        for item in s.split(',') {
            match item.trim() {
                "proposed" => set.proposed = true,
                "assumed" => set.assumed = true,
                "exact" => set.exact = true,
                "" => {}
                other => {
                    return Err(Error::InvalidInput(format!("unknown method '{other}'")));
                }
            }
        }
        Ok(set)
    }
}

/// Full configuration of one experiment. Time steps and node indices in
/// `eval_steps` / `probe_nodes` are 1-based, matching the CSV labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_horizon: usize,
    pub sigma: f64,
    #[serde(rename = "M")]
    pub ensemble_size: usize,
    #[serde(rename = "B")]
    pub replications: usize,
    pub seed: u64,
    pub methods: MethodSet,
    pub alpha: f64,
    pub beta: f64,
    /// `None` means "use the defaults, scaled to the horizon".
    pub eval_steps: Option<Vec<usize>>,
    pub probe_nodes: Option<Vec<usize>>,
    pub out_dir: PathBuf,
    pub dump_value_functions: bool,
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 400,
            t_horizon: 100,
            sigma: 2.0,
            ensemble_size: 20,
            replications: 1000,
            seed: 1,
            methods: MethodSet::default(),
            alpha: 2.0,
            beta: 2.0,
            eval_steps: None,
            probe_nodes: None,
            out_dir: PathBuf::from("out"),
            dump_value_functions: false,
            jobs: None,
        }
    }
}

const DEFAULT_EVAL_STEPS: [usize; 3] = [60, 70, 80];
const DEFAULT_PROBE_NODES: [usize; 3] = [115, 210, 290];

fn scale(values: &[usize], reference: usize, actual: usize) -> Vec<usize> {
    let scaled: BTreeSet<usize> = values
        .iter()
        .map(|&v| {
            ((v as f64 * actual as f64 / reference as f64).round() as usize).clamp(1, actual)
        })
        .collect();
    scaled.into_iter().collect()
}

impl ExperimentConfig {
    /// Effective 1-based evaluation time steps; the defaults scale
    /// proportionally when the horizon differs from 100.
    pub fn effective_eval_steps(&self) -> Vec<usize> {
        match &self.eval_steps {
            Some(v) => v.clone(),
            None => scale(&DEFAULT_EVAL_STEPS, 100, self.t_horizon),
        }
    }

    /// Effective 1-based probe nodes; the defaults scale proportionally
    /// when the lattice width differs from 400.
    pub fn effective_probe_nodes(&self) -> Vec<usize> {
        match &self.probe_nodes {
            Some(v) => v.clone(),
            None => scale(&DEFAULT_PROBE_NODES, 400, self.n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput("n must be >= 2".into()));
        }
        if self.t_horizon < 1 {
            return Err(Error::InvalidInput("T must be >= 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidInput("sigma must be > 0".into()));
        }
        if self.ensemble_size < 1 || self.replications < 1 {
            return Err(Error::InvalidInput("M and B must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidInput("alpha and beta must be > 0".into()));
        }
        if self.methods.exact && self.n > binfilter_core::oracle::MAX_EXACT_N {
            return Err(Error::InvalidInput(format!(
                "exact method requires n <= {}, got n = {}",
                binfilter_core::oracle::MAX_EXACT_N,
                self.n
            )));
        }
        if !(self.methods.proposed || self.methods.assumed || self.methods.exact) {
            return Err(Error::InvalidInput("method set is empty".into()));
        }
        for t in self.effective_eval_steps() {
            if t < 1 || t > self.t_horizon {
                return Err(Error::InvalidInput(format!("eval step {t} outside 1..=T")));
            }
        }
        for i in self.effective_probe_nodes() {
            if i < 1 || i > self.n {
                return Err(Error::InvalidInput(format!("probe node {i} outside 1..=n")));
            }
        }
        Ok(())
    }

    /// Parses a flat `key = value` file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `KEY=VAL` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str, v: &str| Error::InvalidInput(format!("bad {what}: '{v}'"));
        match key {
            "n" => self.n = value.parse().map_err(|_| bad("n", value))?,
            "T" => self.t_horizon = value.parse().map_err(|_| bad("T", value))?,
            "sigma" => self.sigma = value.parse().map_err(|_| bad("sigma", value))?,
            "M" => self.ensemble_size = value.parse().map_err(|_| bad("M", value))?,
            "B" => self.replications = value.parse().map_err(|_| bad("B", value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed", value))?,
            "methods" => self.methods = MethodSet::parse(value)?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("alpha", value))?,
            "beta" => self.beta = value.parse().map_err(|_| bad("beta", value))?,
            "eval_steps" => self.eval_steps = Some(parse_list(value)?),
            "probe_nodes" => self.probe_nodes = Some(parse_list(value)?),
            "out" => self.out_dir = PathBuf::from(value),
            "dump_value_functions" => {
                self.dump_value_functions = value.parse().map_err(|_| bad("bool", value))?
            }
            "jobs" => self.jobs = Some(value.parse().map_err(|_| bad("jobs", value))?),
            other => return Err(Error::InvalidInput(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `KEY=VAL` string as given on the command line.
    pub fn apply_set(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("--set expects KEY=VAL, got '{kv}'")))?;
        self.apply(key.trim(), value.trim())
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad list entry '{s}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_scale_probes_and_steps() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.effective_eval_steps(), vec![60, 70, 80]);
        assert_eq!(cfg.effective_probe_nodes(), vec![115, 210, 290]);
        cfg.n = 12;
        cfg.t_horizon = 40;
        assert_eq!(cfg.effective_eval_steps(), vec![24, 28, 32]);
        // round(115 * 12 / 400) = 3, round(210 * 12 / 400) = 6, round(290 * 12 / 400) = 9
        assert_eq!(cfg.effective_probe_nodes(), vec![3, 6, 9]);
    }

    #[test]
    fn file_and_overrides() {
        let dir = std::env::temp_dir().join("binfilter-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.cfg");
        std::fs::write(
            &path,
            "# comment\nn = 12\nT = 40\nmethods = proposed,exact # trailing comment\nB = 50\n",
        )
        .unwrap();
        let mut cfg = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg.n, 12);
        assert_eq!(cfg.t_horizon, 40);
        assert!(cfg.methods.exact && cfg.methods.proposed && !cfg.methods.assumed);
        cfg.apply_set("M=40").unwrap();
        assert_eq!(cfg.ensemble_size, 40);
        assert!(cfg.apply_set("nonsense").is_err());
        assert!(cfg.apply_set("frobnicate=1").is_err());
    }

    #[test]
    fn validation_catches_exact_at_large_n() {
        let mut cfg = ExperimentConfig::default();
        cfg.methods.exact = true;
        assert!(cfg.validate().is_err());
        cfg.n = 12;
        assert!(cfg.validate().is_ok());
    }
}
