//! Second stage: pairwise learning of a scoring function whose ordering
//! matches the ordering of treatment effects.
//!
//! For a pair of units `(i, j)` the scorer predicts
//! `p = sigmoid(g(x_i) - g(x_j))` and is trained with binary cross-entropy
//! against a label:
//!
//! * plug-in ranker: the soft target `t = sigmoid((tau_i - tau_j) / kappa)`
//!   computed from estimated effects;
//! * Rank-Learner: the orthogonalized pseudo label
//!   `t + omega * Delta`, with `omega = t (1 - t) / kappa` and
//!   `Delta = (phi_i - tau_i) - (phi_j - tau_j)` the difference of doubly
//!   robust residuals.
//!
//! The cross-entropy is affine in the label, so the correction only changes
//! the targets; the loss and its gradients are the usual pairwise ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::math::{bce_with_logit, sigmoid};
use crate::nn::{self, FitOutcome, Gradients, ModelParams, Objective, Task, TrainConfig};
use crate::nuisance::{dr_score_unchecked, NuisanceEstimates, Nuisances};
use crate::rng::{self, StreamRng};

pub const DEFAULT_LABEL_CLIP: f64 = 1e-4;
pub const DEFAULT_PAIR_FRACTION: f64 = 0.01;
pub const KAPPA_GRID: [f64; 5] = [0.25, 0.5, 1.0, 1.5, 3.0];

/// Anything that maps covariates to a real priority score.
pub trait Scorer {
    fn score(&self, x: &[f64]) -> f64;

    fn score_all(&self, xs: &[&[f64]]) -> Vec<f64> {
        xs.iter().map(|x| self.score(x)).collect()
    }

    fn score_dataset(&self, data: &Dataset) -> Vec<f64> {
        data.iter().map(|o| self.score(&o.x)).collect()
    }
}

/// Network with a linear head producing an unbounded score `g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    pub params: ModelParams,
}

impl Scorer for ScoringModel {
    fn score(&self, x: &[f64]) -> f64 {
        self.params.logit(x)
    }

    fn score_all(&self, xs: &[&[f64]]) -> Vec<f64> {
        self.params.predict_all(xs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    pub kappa: f64,
    /// Fraction of the `n^2` ordered pairs sampled per epoch.
    pub pair_fraction: f64,
    pub clip_eps_label: f64,
    pub train: TrainConfig,
}

impl RankConfig {
    pub fn new(kappa: f64, train: TrainConfig) -> Self {
        RankConfig {
            kappa,
            pair_fraction: DEFAULT_PAIR_FRACTION,
            clip_eps_label: DEFAULT_LABEL_CLIP,
            train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_kappa(self.kappa)?;
        if !(self.pair_fraction > 0.0 && self.pair_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "pair_fraction must lie in (0, 1], got {}",
                self.pair_fraction
            )));
        }
        if !(self.clip_eps_label > 0.0 && self.clip_eps_label < 0.5) {
            return Err(Error::invalid(format!(
                "clip_eps_label must lie in (0, 0.5), got {}",
                self.clip_eps_label
            )));
        }
        self.train.validate()
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    Ok(())
}

/// Probability that unit `i` has the larger effect: `sigmoid((tau_i - tau_j) / kappa)`.
pub fn soft_target(tau_i: f64, tau_j: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(sigmoid((tau_i - tau_j) / kappa))
}

/// `t (1 - t) / kappa`, at most `1 / (4 kappa)`.
pub fn correction_weight(t: f64, kappa: f64) -> f64 {
    t * (1.0 - t) / kappa
}

/// Pseudo label before clipping.
pub fn pseudo_label_raw(
    w_i: &Observation,
    w_j: &Observation,
    eta_i: &Nuisances,
    eta_j: &Nuisances,
    kappa: f64,
) -> Result<f64> {
    check_kappa(kappa)?;
    for e in [eta_i.e, eta_j.e] {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::invalid(format!("propensity {e} outside (0,1)")));
        }
    }
    let r_i = dr_residual(w_i, eta_i);
    let r_j = dr_residual(w_j, eta_j);
    Ok(raw_label(eta_i.tau(), eta_j.tau(), r_i - r_j, kappa))
}

/// Pseudo label clipped to `[clip, 1 - clip]`.
pub fn pseudo_label(
    w_i: &Observation,
    w_j: &Observation,
    eta_i: &Nuisances,
    eta_j: &Nuisances,
    kappa: f64,
    clip: f64,
) -> Result<f64> {
    Ok(clip_label(
        pseudo_label_raw(w_i, w_j, eta_i, eta_j, kappa)?,
        clip,
    ))
}

fn dr_residual(w: &Observation, eta: &Nuisances) -> f64 {
    dr_score_unchecked(w.t, w.y, eta.mu0, eta.mu1, eta.e) - eta.tau()
}

#[inline]
fn raw_label(tau_i: f64, tau_j: f64, delta: f64, kappa: f64) -> f64 {
    let t = sigmoid((tau_i - tau_j) / kappa);
    t + correction_weight(t, kappa) * delta
}

#[inline]
fn clip_label(v: f64, clip: f64) -> f64 {
    v.clamp(clip, 1.0 - clip)
}

/// Which supervision the second stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// Orthogonal pseudo labels (Rank-Learner).
    Orthogonal,
    /// Plug-in soft targets.
    PlugIn,
}

/// Per-unit quantities needed to label any pair.
#[derive(Debug, Clone)]
pub struct UnitLabels {
    pub tau_hat: Vec<f64>,
    /// `phi - tau_hat`; zero for plug-in labels.
    pub residual: Vec<f64>,
}

impl UnitLabels {
    pub fn new(data: &Dataset, eta: &[Nuisances], kind: LabelKind) -> Result<Self> {
        if data.len() != eta.len() {
            return Err(Error::invalid(
                "nuisances are not row-aligned with the data",
            ));
        }
        if let Some(bad) = eta.iter().find(|n| !(n.e > 0.0 && n.e < 1.0)) {
            return Err(Error::invalid(format!(
                "propensity {} outside (0,1)",
                bad.e
            )));
        }
        let tau_hat = eta.iter().map(Nuisances::tau).collect();
        let residual = match kind {
            LabelKind::Orthogonal => data
                .iter()
                .zip(eta)
                .map(|(o, n)| dr_residual(o, n))
                .collect(),
            LabelKind::PlugIn => vec![0.0; data.len()],
        };
        Ok(UnitLabels { tau_hat, residual })
    }

    pub fn label(&self, i: usize, j: usize, kappa: f64, clip: f64) -> f64 {
        let delta = self.residual[i] - self.residual[j];
        clip_label(
            raw_label(self.tau_hat[i], self.tau_hat[j], delta, kappa),
            clip,
        )
    }
}

/// Ordered index pairs with their (clipped) labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
}

impl PairBatch {
    pub fn labelled(pairs: Vec<(usize, usize)>, units: &UnitLabels, kappa: f64, clip: f64) -> Self {
        let labels = pairs
            .iter()
            .map(|&(i, j)| units.label(i, j, kappa, clip))
            .collect();
        PairBatch { pairs, labels }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Number of pairs drawn per epoch: `round(fraction * n^2)`, at least one.
pub fn pair_count(n: usize, pair_fraction: f64) -> usize {
    ((pair_fraction * (n as f64) * (n as f64)).round() as usize).max(1)
}

/// Uniform draws with replacement from the `n^2 - n` ordered off-diagonal pairs.
pub fn sample_pairs(
    n: usize,
    pair_fraction: f64,
    rng: &mut StreamRng,
) -> Result<Vec<(usize, usize)>> {
    if !(pair_fraction > 0.0 && pair_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "pair_fraction {pair_fraction} outside (0, 1]"
        )));
    }
    sample_pair_count(n, pair_count(n, pair_fraction), rng)
}

pub fn sample_pair_count(
    n: usize,
    count: usize,
    rng: &mut StreamRng,
) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 units to form pairs, got {n}"
        )));
    }
    Ok((0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect())
}

/// Mean pairwise cross-entropy of `batch` and its exact gradient.
pub fn pairwise_loss_and_grad(
    scorer: &ScoringModel,
    xs: &[&[f64]],
    batch: &PairBatch,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() || batch.pairs.len() != batch.labels.len() {
        return Err(Error::invalid(
            "pair batch must be non-empty with one label per pair",
        ));
    }
    if batch
        .pairs
        .iter()
        .any(|&(i, j)| i >= xs.len() || j >= xs.len() || i == j)
    {
        return Err(Error::invalid("pair index out of range or on the diagonal"));
    }
    let mut grads = scorer.params.zeros_like();
    let loss = pair_loss_accumulate(&scorer.params, xs, &batch.pairs, &batch.labels, &mut grads);
    Ok((loss, grads))
}

fn pair_loss_accumulate(
    params: &ModelParams,
    xs: &[&[f64]],
    pairs: &[(usize, usize)],
    labels: &[f64],
    grads: &mut Gradients,
) -> f64 {
    let scale = 1.0 / pairs.len() as f64;
    let mut hi = vec![0.0; params.hidden];
    let mut hj = vec![0.0; params.hidden];
    let mut total = 0.0;
    for (&(i, j), &label) in pairs.iter().zip(labels) {
        let gi = params.logit_into(xs[i], &mut hi);
        let gj = params.logit_into(xs[j], &mut hj);
        let margin = gi - gj;
        total += bce_with_logit(margin, label);
        let dz = (sigmoid(margin) - label) * scale;
        params.backward_into(xs[i], &hi, dz, grads);
        params.backward_into(xs[j], &hj, -dz, grads);
    }
    total * scale
}

fn pair_loss(params: &ModelParams, xs: &[&[f64]], batch: &PairBatch) -> f64 {
    let scores = params.predict_all(xs);
    let total: f64 = batch
        .pairs
        .iter()
        .zip(&batch.labels)
        .map(|(&(i, j), &t)| bce_with_logit(scores[i] - scores[j], t))
        .sum();
    total / batch.len() as f64
}

struct PairObjective<'a> {
    xs: Vec<&'a [f64]>,
    units: UnitLabels,
    val_xs: Vec<&'a [f64]>,
    val_batch: PairBatch,
    config: &'a RankConfig,
    pair_rng: StreamRng,
    epoch_batch: PairBatch,
}

impl Objective for PairObjective<'_> {
    fn begin_epoch(&mut self, _epoch: usize, _rng: &mut StreamRng) {
        let n = self.xs.len();
        let pairs = sample_pair_count(
            n,
            pair_count(n, self.config.pair_fraction),
            &mut self.pair_rng,
        )
        .expect("n >= 2 checked before training");
        self.epoch_batch = PairBatch::labelled(
            pairs,
            &self.units,
            self.config.kappa,
            self.config.clip_eps_label,
        );
    }

    fn n_batches(&self) -> usize {
        self.epoch_batch
            .len()
            .div_ceil(self.config.train.batch_size)
    }

    fn batch_loss_grad(&self, params: &ModelParams, batch: usize, grads: &mut Gradients) -> f64 {
        let bs = self.config.train.batch_size;
        let lo = batch * bs;
        let hi = (lo + bs).min(self.epoch_batch.len());
        pair_loss_accumulate(
            params,
            &self.xs,
            &self.epoch_batch.pairs[lo..hi],
            &self.epoch_batch.labels[lo..hi],
            grads,
        )
    }

    fn validation_loss(&self, params: &ModelParams) -> f64 {
        pair_loss(params, &self.val_xs, &self.val_batch)
    }
}

/// Size of the fixed validation pair sample: `min(10 n, n^2 - n)`.
pub fn validation_pair_count(n_val: usize) -> usize {
    (10 * n_val).min(n_val * n_val.saturating_sub(1))
}

/// Trains a scorer on pairs of `train` units, early-stopping on a fixed,
/// seeded sample of `val` pairs labelled the same way.
pub fn train_ranker(
    train: &Dataset,
    train_eta: &[Nuisances],
    val: &Dataset,
    val_eta: &[Nuisances],
    kind: LabelKind,
    config: &RankConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.len() < 2 || val.len() < 2 {
        return Err(Error::invalid(
            "ranker needs at least 2 training and 2 validation units",
        ));
    }
    let units = UnitLabels::new(train, train_eta, kind)?;
    let val_units = UnitLabels::new(val, val_eta, kind)?;
    let seed = config.train.seed;
    let val_pairs = sample_pair_count(
        val.len(),
        validation_pair_count(val.len()),
        &mut rng::stream(seed, rng::VALIDATION_PAIRS),
    )?;
    let val_batch = PairBatch::labelled(val_pairs, &val_units, config.kappa, config.clip_eps_label);
    let mut objective = PairObjective {
        xs: train.covariates(),
        units,
        val_xs: val.covariates(),
        val_batch,
        config,
        pair_rng: rng::stream(seed, rng::PAIRS),
        epoch_batch: PairBatch::default(),
    };
    let init = ModelParams::init(train.d(), config.train.hidden, Task::Regression, seed)?;
    nn::train(init, &config.train, &mut objective)
}

/// Rank-Learner: pairwise training on orthogonal pseudo labels. Nuisances
/// for the stage-2 units come from the fold-averaged first-stage models.
pub fn train_rank_learner(
    train: &Dataset,
    val: &Dataset,
    nuisances: &NuisanceEstimates,
    config: &RankConfig,
) -> Result<ScoringModel> {
    let out = train_ranker(
        train,
        &nuisances.predict_dataset(train),
        val,
        &nuisances.predict_dataset(val),
        LabelKind::Orthogonal,
        config,
    )?;
    Ok(ScoringModel { params: out.params })
}

/// Plug-in ranker: identical training on uncorrected soft targets.
pub fn train_plugin_ranker(
    train: &Dataset,
    val: &Dataset,
    nuisances: &NuisanceEstimates,
    config: &RankConfig,
) -> Result<ScoringModel> {
    let out = train_ranker(
        train,
        &nuisances.predict_dataset(train),
        val,
        &nuisances.predict_dataset(val),
        LabelKind::PlugIn,
        config,
    )?;
    Ok(ScoringModel { params: out.params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(t: bool, y: f64) -> Observation {
        Observation { x: vec![0.0], t, y }
    }

    fn eta(mu0: f64, mu1: f64, e: f64) -> Nuisances {
        Nuisances { mu0, mu1, e }
    }

    #[test]
    fn soft_target_examples() {
        assert_eq!(soft_target(0.7, 0.7, 1.3).unwrap(), 0.5);
        // logistic(1) = 0.731058578630005
        assert!((soft_target(1.5, 0.5, 1.0).unwrap() - 0.731_058_578_630_005).abs() < 1e-12);
        assert!(soft_target(1.0, 0.0, 0.5).unwrap() > soft_target(1.0, 0.0, 1.0).unwrap());
        assert!(soft_target(1.0, 0.0, 0.0).is_err());
        assert!(soft_target(1.0, 0.0, -2.0).is_err());
    }

    #[test]
    fn correction_weight_examples() {
        assert_eq!(correction_weight(0.5, 1.0), 0.25);
        assert_eq!(correction_weight(0.0, 1.0), 0.0);
        assert_eq!(correction_weight(1.0, 2.0), 0.0);
        let t = 0.731_058_578_630_005;
        assert!((correction_weight(t, 1.0) - 0.196_611_933_241_482).abs() < 1e-12);
    }

    #[test]
    fn pseudo_label_reduces_to_soft_target_without_residuals() {
        let ei = eta(0.2, 1.4, 0.3);
        let ej = eta(-0.5, 0.1, 0.8);
        let l = pseudo_label(&obs(true, 1.4), &obs(false, -0.5), &ei, &ej, 0.7, 1e-4).unwrap();
        let t = soft_target(1.2, 0.6, 0.7).unwrap();
        assert_eq!(l, t);
    }

    #[test]
    fn pseudo_label_correction_example() {
        // tau_hat = 0 for both, kappa = 1: t = 0.5, omega = 0.25.
        // unit i treated with e = 0.5 and residual y - mu1 = 0.5 gives phi - tau = 1.
        let e = eta(0.0, 0.0, 0.5);
        let l = pseudo_label(&obs(true, 0.5), &obs(true, 0.0), &e, &e, 1.0, 1e-4).unwrap();
        assert!((l - 0.75).abs() < 1e-15);
    }

    #[test]
    fn pseudo_label_is_clipped() {
        assert_eq!(clip_label(1.2, 1e-4), 0.9999);
        assert_eq!(clip_label(-0.3, 1e-4), 1e-4);
        let e = eta(0.0, 0.0, 0.05);
        let l = pseudo_label(&obs(true, 10.0), &obs(false, 0.0), &e, &e, 1.0, 1e-4).unwrap();
        assert_eq!(l, 0.9999);
        assert!(pseudo_label(
            &obs(true, 1.0),
            &obs(true, 1.0),
            &eta(0.0, 0.0, 1.0),
            &e,
            1.0,
            1e-4
        )
        .is_err());
    }

    #[test]
    fn pair_sampling_size_and_diagonal() {
        let mut rng = rng::stream(1, rng::PAIRS);
        let pairs = sample_pairs(1_000, 0.01, &mut rng).unwrap();
        assert_eq!(pairs.len(), 10_000);
        assert!(pairs.iter().all(|&(i, j)| i != j && i < 1_000 && j < 1_000));
        let again = sample_pairs(1_000, 0.01, &mut rng::stream(1, rng::PAIRS)).unwrap();
        assert_eq!(pairs, again);
        assert!(sample_pairs(1, 0.5, &mut rng).is_err());
        assert!(sample_pairs(10, 0.0, &mut rng).is_err());
    }

    #[test]
    fn validation_pair_count_caps_at_all_pairs() {
        assert_eq!(validation_pair_count(400), 4_000);
        assert_eq!(validation_pair_count(5), 20);
        assert_eq!(validation_pair_count(1), 0);
    }

    #[test]
    fn half_labels_give_at_least_ln2() {
        let params = ModelParams::init(2, 4, Task::Regression, 5).unwrap();
        let scorer = ScoringModel { params };
        let xs_owned = [vec![0.1, 0.2], vec![-1.0, 2.0], vec![0.1, 0.2]];
        let xs: Vec<&[f64]> = xs_owned.iter().map(|x| x.as_slice()).collect();
        let ln2 = std::f64::consts::LN_2;
        for &(i, j) in &[(0, 1), (1, 2)] {
            let batch = PairBatch {
                pairs: vec![(i, j)],
                labels: vec![0.5],
            };
            let (loss, _) = pairwise_loss_and_grad(&scorer, &xs, &batch).unwrap();
            assert!(loss > ln2);
        }
        // identical inputs give equal scores: exactly ln 2
        let batch = PairBatch {
            pairs: vec![(0, 2)],
            labels: vec![0.5],
        };
        let (loss, g) = pairwise_loss_and_grad(&scorer, &xs, &batch).unwrap();
        assert!((loss - ln2).abs() < 1e-15);
        assert!(g.to_flat().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn matching_label_has_zero_margin_gradient() {
        let params = ModelParams::init(2, 4, Task::Regression, 6).unwrap();
        let scorer = ScoringModel { params };
        let xs_owned = [vec![0.3, -0.2], vec![1.0, 0.5]];
        let xs: Vec<&[f64]> = xs_owned.iter().map(|x| x.as_slice()).collect();
        let p = sigmoid(scorer.score(xs[0]) - scorer.score(xs[1]));
        let batch = PairBatch {
            pairs: vec![(0, 1)],
            labels: vec![p],
        };
        let (_, g) = pairwise_loss_and_grad(&scorer, &xs, &batch).unwrap();
        assert!(g.to_flat().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pairwise_batch_validation() {
        let params = ModelParams::init(1, 2, Task::Regression, 0).unwrap();
        let scorer = ScoringModel { params };
        let xs: Vec<&[f64]> = vec![&[0.0], &[1.0]];
        let empty = PairBatch::default();
        assert!(pairwise_loss_and_grad(&scorer, &xs, &empty).is_err());
        let diag = PairBatch {
            pairs: vec![(1, 1)],
            labels: vec![0.5],
        };
        assert!(pairwise_loss_and_grad(&scorer, &xs, &diag).is_err());
        let oob = PairBatch {
            pairs: vec![(0, 2)],
            labels: vec![0.5],
        };
        assert!(pairwise_loss_and_grad(&scorer, &xs, &oob).is_err());
    }

    #[test]
    fn rank_config_validation() {
        let mut cfg = RankConfig::new(1.0, TrainConfig::default());
        assert!(cfg.validate().is_ok());
        cfg.pair_fraction = 1.5;
        assert!(cfg.validate().is_err());
        cfg.pair_fraction = 0.1;
        cfg.clip_eps_label = 0.5;
        assert!(cfg.validate().is_err());
        cfg.clip_eps_label = 1e-4;
        cfg.kappa = 0.0;
        assert!(cfg.validate().is_err());
    }
}
