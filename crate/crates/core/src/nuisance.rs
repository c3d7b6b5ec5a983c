//! First stage: cross-fitted response surfaces and propensity, and the
//! doubly robust scores built from them.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dgp::{partition_fraction, Dataset, TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::nn::{self, ModelParams, Task, TrainConfig};
use crate::rng;

pub const DEFAULT_FOLDS: usize = 2;
pub const DEFAULT_CLIP: f64 = 0.01;

/// `(mu0, mu1, e)` evaluated at one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nuisances {
    pub mu0: f64,
    pub mu1: f64,
    pub e: f64,
}

impl Nuisances {
    pub fn tau(&self) -> f64 {
        self.mu1 - self.mu0
    }
}

/// Models trained on the complement of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldModels {
    pub mu0: ModelParams,
    pub mu1: ModelParams,
    pub e: ModelParams,
}

#[derive(Debug, Clone)]
pub struct NuisanceEstimates {
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    /// Clipped to `[clip_eps, 1 - clip_eps]`.
    pub e_hat: Vec<f64>,
    pub fold: Vec<usize>,
    pub fold_models: Vec<FoldModels>,
    pub clip_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrScores {
    pub phi: Vec<f64>,
}

/// Doubly robust score
/// `T/e (Y - mu1) - (1-T)/(1-e) (Y - mu0) + mu1 - mu0`.
pub fn dr_score(t: bool, y: f64, mu0: f64, mu1: f64, e: f64) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::invalid(format!("propensity {e} outside (0,1)")));
    }
    Ok(dr_score_unchecked(t, y, mu0, mu1, e))
}

pub(crate) fn dr_score_unchecked(t: bool, y: f64, mu0: f64, mu1: f64, e: f64) -> f64 {
    let correction = if t {
        (y - mu1) / e
    } else {
        -(y - mu0) / (1.0 - e)
    };
    correction + mu1 - mu0
}

impl DrScores {
    /// Scores for every unit of `data` given row-aligned nuisance values.
    pub fn compute(data: &Dataset, eta: &[Nuisances]) -> Result<DrScores> {
        if data.len() != eta.len() {
            return Err(Error::invalid(
                "nuisances are not row-aligned with the data",
            ));
        }
        let phi = data
            .iter()
            .zip(eta)
            .map(|(o, n)| dr_score(o.t, o.y, n.mu0, n.mu1, n.e))
            .collect::<Result<Vec<_>>>()?;
        Ok(DrScores { phi })
    }
}

fn check_clip(clip_eps: f64) -> Result<()> {
    if !(clip_eps > 0.0 && clip_eps < 0.5) {
        return Err(Error::invalid(format!(
            "clip_eps must lie in (0, 0.5), got {clip_eps}"
        )));
    }
    Ok(())
}

fn clip(e: f64, eps: f64) -> f64 {
    e.clamp(eps, 1.0 - eps)
}

/// Seeded, balanced fold labels: a random permutation dealt round-robin.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::FOLDS));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// K-fold cross-fitting. For each fold, `mu1` is fit on treated and `mu0` on
/// control units outside the fold, `e` on all units outside it; each fit
/// early-stops on an 80/20 split of the fold's complement. Every unit's
/// stored prediction comes from the models that never saw it.
pub fn cross_fit(
    data: &Dataset,
    folds: usize,
    config: &TrainConfig,
    clip_eps: f64,
) -> Result<NuisanceEstimates> {
    if folds < 2 {
        return Err(Error::invalid("cross-fitting needs at least 2 folds"));
    }
    if data.len() < folds {
        return Err(Error::invalid("fewer units than folds"));
    }
    let fold = assign_folds(data.len(), folds, config.seed);
    cross_fit_with_folds(data, &fold, config, clip_eps)
}

/// [`cross_fit`] with caller-supplied fold labels `0..K`.
pub fn cross_fit_with_folds(
    data: &Dataset,
    fold: &[usize],
    config: &TrainConfig,
    clip_eps: f64,
) -> Result<NuisanceEstimates> {
    check_clip(clip_eps)?;
    config.validate()?;
    if fold.len() != data.len() {
        return Err(Error::invalid(
            "fold labels are not row-aligned with the data",
        ));
    }
    let k = fold.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::invalid("cross-fitting needs at least 2 folds"));
    }
    let fold_models = (0..k)
        .into_par_iter()
        .map(|f| fit_fold(data, fold, f, config))
        .collect::<Result<Vec<_>>>()?;

    let n = data.len();
    let mut est = NuisanceEstimates {
        mu0_hat: Vec::with_capacity(n),
        mu1_hat: Vec::with_capacity(n),
        e_hat: Vec::with_capacity(n),
        fold: fold.to_vec(),
        fold_models,
        clip_eps,
    };
    for (o, &f) in data.iter().zip(fold) {
        let m = &est.fold_models[f];
        est.mu0_hat.push(m.mu0.predict(&o.x));
        est.mu1_hat.push(m.mu1.predict(&o.x));
        est.e_hat.push(clip(m.e.predict(&o.x), clip_eps));
    }
    Ok(est)
}

fn fit_fold(data: &Dataset, fold: &[usize], f: usize, config: &TrainConfig) -> Result<FoldModels> {
    let complement: Vec<usize> = (0..data.len()).filter(|&i| fold[i] != f).collect();
    let inner = partition_fraction(
        complement.len(),
        TRAIN_FRACTION,
        rng::derive(config.seed, 100 + f as u64),
        2,
    )
    .map_err(|_| Error::DegenerateSplit(format!("fold {f} complement is too small")))?;
    let train: Vec<usize> = inner.train.iter().map(|&j| complement[j]).collect();
    let val: Vec<usize> = inner.val.iter().map(|&j| complement[j]).collect();

    let arm_fit = |treated: bool, slot: u64| -> Result<ModelParams> {
        let tr: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&i| data.get(i).t == treated)
            .collect();
        let va: Vec<usize> = val
            .iter()
            .copied()
            .filter(|&i| data.get(i).t == treated)
            .collect();
        if tr.is_empty() || va.is_empty() {
            return Err(Error::DegenerateSplit(format!(
                "fold {f}: no {} units in the training or validation part",
                if treated { "treated" } else { "control" }
            )));
        }
        let cfg = config.with_seed(rng::derive(config.seed, 10 * f as u64 + slot));
        fit_rows(data, &tr, &va, |i| data.get(i).y, Task::Regression, &cfg)
    };
    let mu0 = arm_fit(false, 0)?;
    let mu1 = arm_fit(true, 1)?;
    let cfg = config.with_seed(rng::derive(config.seed, 10 * f as u64 + 2));
    let e = fit_rows(
        data,
        &train,
        &val,
        |i| data.get(i).t_f64(),
        Task::Binary,
        &cfg,
    )?;
    Ok(FoldModels { mu0, mu1, e })
}

pub(crate) fn fit_rows(
    data: &Dataset,
    train: &[usize],
    val: &[usize],
    target: impl Fn(usize) -> f64,
    task: Task,
    config: &TrainConfig,
) -> Result<ModelParams> {
    let tx: Vec<&[f64]> = train.iter().map(|&i| data.get(i).x.as_slice()).collect();
    let ty: Vec<f64> = train.iter().map(|&i| target(i)).collect();
    let vx: Vec<&[f64]> = val.iter().map(|&i| data.get(i).x.as_slice()).collect();
    let vy: Vec<f64> = val.iter().map(|&i| target(i)).collect();
    Ok(nn::fit(&tx, &ty, &vx, &vy, task, config)?.params)
}

impl NuisanceEstimates {
    /// Cross-fitted nuisance values of the units the estimates were fit on.
    pub fn in_sample(&self) -> Vec<Nuisances> {
        (0..self.mu0_hat.len())
            .map(|i| Nuisances {
                mu0: self.mu0_hat[i],
                mu1: self.mu1_hat[i],
                e: self.e_hat[i],
            })
            .collect()
    }

    /// Cross-fitted doubly robust scores of the fitting sample.
    pub fn dr_scores(&self, data: &Dataset) -> Result<DrScores> {
        DrScores::compute(data, &self.in_sample())
    }

    /// Nuisances at a new point: average of the fold models, propensity
    /// clipped after averaging.
    pub fn predict(&self, x: &[f64]) -> Nuisances {
        let k = self.fold_models.len() as f64;
        let mut acc = Nuisances {
            mu0: 0.0,
            mu1: 0.0,
            e: 0.0,
        };
        for m in &self.fold_models {
            acc.mu0 += m.mu0.predict(x);
            acc.mu1 += m.mu1.predict(x);
            acc.e += m.e.predict(x);
        }
        Nuisances {
            mu0: acc.mu0 / k,
            mu1: acc.mu1 / k,
            e: clip(acc.e / k, self.clip_eps),
        }
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Vec<Nuisances> {
        data.iter().map(|o| self.predict(&o.x)).collect()
    }
}

/// Free-function form of [`NuisanceEstimates::predict`].
pub fn predict_nuisances(estimates: &NuisanceEstimates, x: &[f64]) -> Nuisances {
    estimates.predict(x)
}
