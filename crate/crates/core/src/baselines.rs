//! CATE-magnitude baselines that rank units by an estimated effect.

use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, ModelParams, Task, TrainConfig};
use crate::nuisance::{DrScores, NuisanceEstimates, Nuisances};
use crate::ranker::{Scorer, ScoringModel};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    TLearner,
    DrLearner,
}

/// Two response-surface regressors; the score is their difference.
#[derive(Debug, Clone, PartialEq)]
pub struct TLearner {
    pub mu0: ModelParams,
    pub mu1: ModelParams,
}

impl Scorer for TLearner {
    fn score(&self, x: &[f64]) -> f64 {
        self.mu1.logit(x) - self.mu0.logit(x)
    }

    fn score_all(&self, xs: &[&[f64]]) -> Vec<f64> {
        let m1 = self.mu1.predict_all(xs);
        let m0 = self.mu0.predict_all(xs);
        m1.iter().zip(&m0).map(|(a, b)| a - b).collect()
    }
}

pub fn train_t_learner(train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<TLearner> {
    let arm = |treated: bool, slot: u64| -> Result<ModelParams> {
        let tr: Vec<usize> = (0..train.len())
            .filter(|&i| train.get(i).t == treated)
            .collect();
        let va: Vec<usize> = (0..val.len())
            .filter(|&i| val.get(i).t == treated)
            .collect();
        if tr.is_empty() || va.is_empty() {
            return Err(Error::DegenerateSplit(format!(
                "T-learner: empty {} arm",
                if treated { "treated" } else { "control" }
            )));
        }
        let cfg = config.with_seed(rng::derive(config.seed, slot));
        let tx: Vec<&[f64]> = tr.iter().map(|&i| train.get(i).x.as_slice()).collect();
        let ty: Vec<f64> = tr.iter().map(|&i| train.get(i).y).collect();
        let vx: Vec<&[f64]> = va.iter().map(|&i| val.get(i).x.as_slice()).collect();
        let vy: Vec<f64> = va.iter().map(|&i| val.get(i).y).collect();
        Ok(nn::fit(&tx, &ty, &vx, &vy, Task::Regression, &cfg)?.params)
    };
    Ok(TLearner {
        mu0: arm(false, 0)?,
        mu1: arm(true, 1)?,
    })
}

/// Regresses doubly robust scores on covariates.
pub fn train_dr_learner_on(
    train: &Dataset,
    train_eta: &[Nuisances],
    val: &Dataset,
    val_eta: &[Nuisances],
    config: &TrainConfig,
) -> Result<ScoringModel> {
    let train_phi = DrScores::compute(train, train_eta)?;
    let val_phi = DrScores::compute(val, val_eta)?;
    train_on_targets(train, &train_phi.phi, val, &val_phi.phi, config)
}

/// Pointwise regression of arbitrary per-unit targets.
pub fn train_on_targets(
    train: &Dataset,
    train_targets: &[f64],
    val: &Dataset,
    val_targets: &[f64],
    config: &TrainConfig,
) -> Result<ScoringModel> {
    if train.len() != train_targets.len() || val.len() != val_targets.len() {
        return Err(Error::invalid("targets are not row-aligned with the data"));
    }
    let out = nn::fit(
        &train.covariates(),
        train_targets,
        &val.covariates(),
        val_targets,
        Task::Regression,
        config,
    )?;
    Ok(ScoringModel { params: out.params })
}

/// DR-learner using the fold-averaged first-stage nuisances at the stage-2 units.
pub fn train_dr_learner(
    train: &Dataset,
    val: &Dataset,
    nuisances: &NuisanceEstimates,
    config: &TrainConfig,
) -> Result<ScoringModel> {
    train_dr_learner_on(
        train,
        &nuisances.predict_dataset(train),
        val,
        &nuisances.predict_dataset(val),
        config,
    )
}
