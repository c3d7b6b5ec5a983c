//! Benchmark specification and its flat `key = value` file format.
//!
//! ```text
//! # comment
//! methods = rank_learner, plugin_ranker
//! n_grid = 500, 2000
//! seeds = 0, 1, 2
//! kappa_grid = 0.25, 0.5, 1, 1.5, 3
//! pair_fraction = 0.01
//! alpha = 1
//! test_size = 1000
//! test_seed = 17
//! output_dir = runs/demo
//! ```
//!
//! Every key is optional; missing keys keep their defaults. Unknown or
//! repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::{DEFAULT_PAIR_FRACTION, KAPPA_GRID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TLearner,
    DrLearner,
    PluginRanker,
    RankLearner,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::TLearner,
        Method::DrLearner,
        Method::PluginRanker,
        Method::RankLearner,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::TLearner => "t_learner",
            Method::DrLearner => "dr_learner",
            Method::PluginRanker => "plugin_ranker",
            Method::RankLearner => "rank_learner",
        }
    }

    pub fn is_ranker(self) -> bool {
        matches!(self, Method::PluginRanker | Method::RankLearner)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Test-set seed whose oracle metrics sit at the reference values.
pub const DEFAULT_TEST_SEED: u64 = 10_002;
pub const DEFAULT_TEST_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub methods: Vec<Method>,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub kappa_grid: Vec<f64>,
    pub pair_fraction: f64,
    pub alpha: f64,
    pub test_size: usize,
    pub test_seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            methods: Method::ALL.to_vec(),
            n_grid: vec![100, 250, 500, 1000, 2000],
            seeds: (0..5).collect(),
            kappa_grid: KAPPA_GRID.to_vec(),
            pair_fraction: DEFAULT_PAIR_FRACTION,
            alpha: 1.0,
            test_size: DEFAULT_TEST_SIZE,
            test_seed: DEFAULT_TEST_SEED,
            output_dir: None,
        }
    }
}

pub const KEYS: [&str; 9] = [
    "methods",
    "n_grid",
    "seeds",
    "kappa_grid",
    "pair_fraction",
    "alpha",
    "test_size",
    "test_seed",
    "output_dir",
];

fn list<T: FromStr>(value: &str, line: u64, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::parse(line, 1, format!("invalid value `{s}` for `{key}`")))
        })
        .collect()
}

fn scalar<T: FromStr>(value: &str, line: u64, key: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::parse(line, 1, format!("invalid value `{value}` for `{key}`")))
}

impl BenchmarkSpec {
    /// Sets one field from its textual value, as found in a config file or
    /// on the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_at(key, value, 0)
    }

    fn set_at(&mut self, key: &str, value: &str, line: u64) -> Result<()> {
        match key {
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<Method>()
                            .map_err(|e| Error::parse(line, 1, e.to_string()))
                    })
                    .collect::<Result<_>>()?
            }
            "n_grid" => self.n_grid = list(value, line, key)?,
            "seeds" => self.seeds = list(value, line, key)?,
            "kappa_grid" => self.kappa_grid = list(value, line, key)?,
            "pair_fraction" => self.pair_fraction = scalar(value, line, key)?,
            "alpha" => self.alpha = scalar(value, line, key)?,
            "test_size" => self.test_size = scalar(value, line, key)?,
            "test_seed" => self.test_seed = scalar(value, line, key)?,
            "output_dir" => {
                let v = value.trim();
                self.output_dir = if v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                };
            }
            other => return Err(Error::parse(line, 1, format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = BenchmarkSpec::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i as u64 + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::parse(line, 1, "expected `key = value`"));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(line, 1, format!("duplicate key `{key}`")));
            }
            spec.set_at(key, value, line)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.n_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid(
                "methods, n_grid and seeds must be non-empty",
            ));
        }
        if self.kappa_grid.is_empty() && self.methods.iter().any(|m| m.is_ranker()) {
            return Err(Error::invalid(
                "kappa_grid must be non-empty for ranking methods",
            ));
        }
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.methods.len() {
            return Err(Error::invalid("methods contain duplicates"));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 20) {
            return Err(Error::invalid(format!(
                "training size {n} is too small (need >= 20)"
            )));
        }
        if let Some(k) = self
            .kappa_grid
            .iter()
            .find(|k| !(**k > 0.0 && k.is_finite()))
        {
            return Err(Error::invalid(format!("kappa must be positive, got {k}")));
        }
        if !(self.pair_fraction > 0.0 && self.pair_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "pair_fraction must lie in (0, 1], got {}",
                self.pair_fraction
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.test_size < 2 {
            return Err(Error::invalid("test_size must be at least 2"));
        }
        Ok(())
    }

    /// Renders the spec in the config-file format; parsing the result gives
    /// the same spec back.
    pub fn to_config_text(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let mut s = String::new();
        s.push_str(&format!(
            "methods = {}\n",
            join(self.methods.iter().map(|m| m.to_string()).collect())
        ));
        s.push_str(&format!(
            "n_grid = {}\n",
            join(self.n_grid.iter().map(|v| v.to_string()).collect())
        ));
        s.push_str(&format!(
            "seeds = {}\n",
            join(self.seeds.iter().map(|v| v.to_string()).collect())
        ));
        s.push_str(&format!(
            "kappa_grid = {}\n",
            join(self.kappa_grid.iter().map(|v| format!("{v:?}")).collect())
        ));
        s.push_str(&format!("pair_fraction = {:?}\n", self.pair_fraction));
        s.push_str(&format!("alpha = {:?}\n", self.alpha));
        s.push_str(&format!("test_size = {}\n", self.test_size));
        s.push_str(&format!("test_seed = {}\n", self.test_seed));
        if let Some(dir) = &self.output_dir {
            s.push_str(&format!("output_dir = {}\n", dir.display()));
        }
        s
    }
}
