//! Synthetic benchmark data with known treatment effects.
//!
//! Covariates are ten independent standard normals. Formulas below index
//! covariates 1-based (`X1..X10`) while storage is 0-based, so `X1` is
//! `x[0]` and `X7` is `x[6]`.
//!
//! The treatment effect is a strictly increasing transform of a latent score,
//! so the true ranking is fully determined by that score:
//!
//! ```text
//! s(X)   = 0.8 X1 + 0.6 X2 + 0.4 X3 + 0.3 X1^2 - 0.2 X2 X3
//! tau(X) = s(X) + 0.5 tanh(s(X))
//! e(X)   = sigmoid(alpha * (0.8 s(X) + 0.6 (X6 - 0.5 X7)))
//! mu0(X) = 0.5 X2 - 0.4 X3 + 0.3 sin(X4) + 0.2 (X5^2 - 1)
//! mu1(X) = mu0(X) + tau(X)
//! Y      = T mu1(X) + (1 - T) mu0(X) + eps,  eps ~ N(0, noise_sd^2)
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::rng;

/// Covariate dimension of the synthetic benchmark.
pub const DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub t: bool,
    pub y: f64,
}

impl Observation {
    pub fn treated(&self) -> bool {
        self.t
    }

    pub fn t_f64(&self) -> f64 {
        if self.t {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    observations: Vec<Observation>,
}

impl Dataset {
    /// Builds a dataset, checking dimensions and finiteness of every row.
    pub fn new(d: usize, observations: Vec<Observation>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("covariate dimension must be at least 1"));
        }
        for (i, obs) in observations.iter().enumerate() {
            if obs.x.len() != d {
                return Err(Error::invalid(format!(
                    "row {i} has {} covariates, expected {d}",
                    obs.x.len()
                )));
            }
            if !obs.y.is_finite() || obs.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a non-finite value")));
            }
        }
        Ok(Dataset { d, observations })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    pub fn n_treated(&self) -> usize {
        self.observations.iter().filter(|o| o.t).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            d: self.d,
            observations: indices
                .iter()
                .map(|&i| self.observations[i].clone())
                .collect(),
        }
    }

    /// Rows whose treatment flag equals `treated`.
    pub fn arm(&self, treated: bool) -> Dataset {
        Dataset {
            d: self.d,
            observations: self
                .observations
                .iter()
                .filter(|o| o.t == treated)
                .cloned()
                .collect(),
        }
    }

    pub fn covariates(&self) -> Vec<&[f64]> {
        self.observations.iter().map(|o| o.x.as_slice()).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y).collect()
    }
}

/// Oracle quantities per unit, row-aligned with a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub tau: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub e: Vec<f64>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn push(&mut self, tau: f64, mu0: f64, mu1: f64, e: f64) {
        self.tau.push(tau);
        self.mu0.push(mu0);
        self.mu1.push(mu1);
        self.e.push(e);
    }

    pub fn subset(&self, indices: &[usize]) -> GroundTruth {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        GroundTruth {
            tau: pick(&self.tau),
            mu0: pick(&self.mu0),
            mu1: pick(&self.mu1),
            e: pick(&self.e),
        }
    }

    /// Checks column lengths agree, values are finite and `0 < e < 1`.
    pub fn validate(&self) -> Result<()> {
        let n = self.tau.len();
        if self.mu0.len() != n || self.mu1.len() != n || self.e.len() != n {
            return Err(Error::invalid("ground-truth columns differ in length"));
        }
        for i in 0..n {
            let row = [self.tau[i], self.mu0[i], self.mu1[i], self.e[i]];
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "ground-truth row {i} is not finite"
                )));
            }
            if !(self.e[i] > 0.0 && self.e[i] < 1.0) {
                return Err(Error::invalid(format!(
                    "ground-truth row {i}: propensity {} outside (0,1)",
                    self.e[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub seed: u64,
    /// Overlap sharpness; larger values push propensities towards 0 and 1.
    pub alpha: f64,
    pub noise_sd: f64,
}

impl DgpConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        DgpConfig {
            n,
            seed,
            alpha: 1.0,
            noise_sd: 0.6,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid(format!(
                "noise_sd must be non-negative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

fn check_dim(x: &[f64]) -> Result<()> {
    if x.len() != DIM {
        return Err(Error::invalid(format!(
            "expected {DIM} covariates, got {}",
            x.len()
        )));
    }
    Ok(())
}

pub fn latent_score(x: &[f64]) -> Result<f64> {
    check_dim(x)?;
    Ok(latent(x))
}

pub fn true_cate(x: &[f64]) -> Result<f64> {
    check_dim(x)?;
    Ok(cate_from_latent(latent(x)))
}

pub fn true_propensity(x: &[f64], alpha: f64) -> Result<f64> {
    check_dim(x)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(propensity(x, latent(x), alpha))
}

pub fn true_mu0(x: &[f64]) -> Result<f64> {
    check_dim(x)?;
    Ok(baseline(x))
}

pub fn true_mu1(x: &[f64]) -> Result<f64> {
    check_dim(x)?;
    Ok(baseline(x) + cate_from_latent(latent(x)))
}

fn latent(x: &[f64]) -> f64 {
    0.8 * x[0] + 0.6 * x[1] + 0.4 * x[2] + 0.3 * x[0] * x[0] - 0.2 * x[1] * x[2]
}

/// `u + 0.5 tanh(u)`, strictly increasing in `u`.
pub fn cate_from_latent(s: f64) -> f64 {
    s + 0.5 * s.tanh()
}

fn propensity(x: &[f64], s: f64, alpha: f64) -> f64 {
    sigmoid(alpha * (0.8 * s + 0.6 * (x[5] - 0.5 * x[6])))
}

fn baseline(x: &[f64]) -> f64 {
    0.5 * x[1] - 0.4 * x[2] + 0.3 * x[3].sin() + 0.2 * (x[4] * x[4] - 1.0)
}

/// Draws `config.n` units. Covariates, treatment uniforms and noise come from
/// three separate streams of `config.seed`, so changing `alpha` re-assigns
/// treatments without touching covariates or noise.
pub fn generate(config: &DgpConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut cov_rng = rng::stream(config.seed, rng::COVARIATES);
    let mut t_rng = rng::stream(config.seed, rng::TREATMENT);
    let mut noise_rng = rng::stream(config.seed, rng::NOISE);
    let noise = Normal::new(0.0, config.noise_sd)
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;

    let mut observations = Vec::with_capacity(config.n);
    let mut truth = GroundTruth::default();
    for _ in 0..config.n {
        let x: Vec<f64> = (0..DIM)
            .map(|_| StandardNormal.sample(&mut cov_rng))
            .collect();
        let s = latent(&x);
        let tau = cate_from_latent(s);
        let mu0 = baseline(&x);
        let mu1 = mu0 + tau;
        let e = propensity(&x, s, config.alpha);
        let u: f64 = t_rng.random();
        let t = u < e;
        let eps: f64 = noise.sample(&mut noise_rng);
        let y = if t { mu1 } else { mu0 } + eps;
        observations.push(Observation { x, t, y });
        // mu1 - mu0 rounds differently from tau in general; store the pair
        // so that the difference is exactly tau.
        truth.push(mu1 - mu0, mu0, mu1, e);
    }
    Ok((
        Dataset {
            d: DIM,
            observations,
        },
        truth,
    ))
}

/// Two independent draws of the same size: seeds `config.seed` and
/// `config.seed + 1`. The first trains the nuisance models, the second the
/// second-stage models.
pub fn generate_split_samples(
    config: &DgpConfig,
) -> Result<((Dataset, GroundTruth), (Dataset, GroundTruth))> {
    let first = generate(config)?;
    let second = generate(&DgpConfig {
        seed: config.seed.wrapping_add(1),
        ..config.clone()
    })?;
    Ok((first, second))
}

/// Mean of `min(e, 1 - e)`.
pub fn overlap_measure(truth: &GroundTruth) -> Result<f64> {
    if truth.e.is_empty() {
        return Err(Error::invalid("overlap of an empty sample"));
    }
    let total: f64 = truth.e.iter().map(|&e| e.min(1.0 - e)).sum();
    Ok(total / truth.e.len() as f64)
}

/// Index sets of a seeded 80/20 train/validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

pub const TRAIN_FRACTION: f64 = 0.8;

/// Splits `n` indices 80/20 uniformly at random without replacement.
pub fn partition(n: usize, seed: u64) -> Result<Split> {
    partition_fraction(n, TRAIN_FRACTION, seed, 10)
}

pub(crate) fn partition_fraction(
    n: usize,
    train_fraction: f64,
    seed: u64,
    min_rows: usize,
) -> Result<Split> {
    if n < min_rows {
        return Err(Error::invalid(format!(
            "need at least {min_rows} rows to split, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::PARTITION));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let val = idx.split_off(n_train);
    Ok(Split { train: idx, val })
}

/// Applies a [`Split`] to a dataset and its ground truth.
pub fn apply_split(
    data: &Dataset,
    truth: &GroundTruth,
    split: &Split,
) -> ((Dataset, GroundTruth), (Dataset, GroundTruth)) {
    (
        (data.subset(&split.train), truth.subset(&split.train)),
        (data.subset(&split.val), truth.subset(&split.val)),
    )
}
