//! Single-hidden-layer ReLU network trained with Adam.
//!
//! The same network family backs every learned component: nuisance models,
//! CATE regressors and pairwise scorers. Output heads are linear (regression)
//! or logistic (binary classification with possibly soft targets).

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{bce_with_logit, sigmoid};
use crate::rng::{self, StreamRng};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Binary,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Binary => "binary",
        }
    }
}

/// Network weights. `w1` is row-major `[hidden][d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub task: Task,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(d: usize, hidden: usize, task: Task, seed: u64) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(Error::invalid(format!(
                "network dimensions must be positive (d={d}, hidden={hidden})"
            )));
        }
        let mut rng = rng::stream(seed, rng::INIT);
        let lim1 = glorot_limit(d, hidden);
        let lim2 = glorot_limit(hidden, 1);
        let w1 = (0..hidden * d)
            .map(|_| rng.random_range(-lim1..lim1))
            .collect();
        let w2 = (0..hidden).map(|_| rng.random_range(-lim2..lim2)).collect();
        Ok(ModelParams {
            d,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
            task,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            d: self.d,
            hidden: self.hidden,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: vec![0.0; self.hidden],
            b2: 0.0,
            task: self.task,
        }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Flat view in the order `w1, b1, w2, b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let (w1, rest) = flat.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }

    fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, std::slice::from_ref(&self.b2)]
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn weight_norm_sq(&self) -> f64 {
        self.w1.iter().chain(&self.w2).map(|w| w * w).sum()
    }

    fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(0.0);
        }
    }

    /// Output pre-activation; hidden activations are written to `h`.
    pub(crate) fn logit_into(&self, x: &[f64], h: &mut [f64]) -> f64 {
        let mut out = self.b2;
        for (k, hk) in h.iter_mut().enumerate() {
            let row = &self.w1[k * self.d..(k + 1) * self.d];
            let a = self.b1[k] + dot(row, x);
            *hk = if a > 0.0 { a } else { 0.0 };
            out += self.w2[k] * *hk;
        }
        out
    }

    /// Accumulates `dlogit * d(logit)/d(params)` into `grads`, given the
    /// hidden activations from [`Self::logit_into`].
    pub(crate) fn backward_into(&self, x: &[f64], h: &[f64], dlogit: f64, grads: &mut Gradients) {
        grads.b2 += dlogit;
        for (k, &hk) in h.iter().enumerate() {
            grads.w2[k] += dlogit * hk;
            if hk > 0.0 {
                let dh = dlogit * self.w2[k];
                grads.b1[k] += dh;
                let row = &mut grads.w1[k * self.d..(k + 1) * self.d];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += dh * xi;
                }
            }
        }
    }

    /// Network pre-activation `w2 . relu(w1 x + b1) + b2`.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.logit_into(x, &mut h)
    }

    /// Linear output for regression, logistic output for binary heads.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::invalid(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.d
            )));
        }
        Ok(self.predict(x))
    }

    /// [`Self::forward`] without the dimension check.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.logit(x);
        match self.task {
            Task::Regression => z,
            Task::Binary => sigmoid(z),
        }
    }

    pub fn predict_all(&self, xs: &[&[f64]]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        xs.iter()
            .map(|x| {
                let z = self.logit_into(x, &mut h);
                match self.task {
                    Task::Regression => z,
                    Task::Binary => sigmoid(z),
                }
            })
            .collect()
    }

    /// Writes the versioned text checkpoint.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "task {}", self.task.as_str());
        let _ = writeln!(s, "d {}", self.d);
        let _ = writeln!(s, "hidden {}", self.hidden);
        for (name, vals) in [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2)] {
            s.push_str(name);
            for v in vals.iter() {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "b2 {:?}", self.b2);
        s
    }

    /// Parses a checkpoint produced by [`Self::to_checkpoint`].
    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
        let (ln, magic) = lines
            .next()
            .ok_or_else(|| Error::parse(1, 1, "empty checkpoint"))?;
        if magic.trim_end() != CHECKPOINT_MAGIC {
            return Err(Error::parse(
                ln,
                1,
                format!("expected header `{CHECKPOINT_MAGIC}`"),
            ));
        }
        let mut field = |name: &str| -> Result<(u64, Vec<&str>)> {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, 1, format!("missing `{name}` line")))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some(key) if key == name => Ok((ln, parts.collect())),
                _ => Err(Error::parse(ln, 1, format!("expected `{name}`"))),
            }
        };
        let (ln, task) = field("task")?;
        let task = match task.as_slice() {
            ["regression"] => Task::Regression,
            ["binary"] => Task::Binary,
            _ => return Err(Error::parse(ln, 6, "task must be `regression` or `binary`")),
        };
        let d = parse_dim(field("d")?)?;
        let hidden = parse_dim(field("hidden")?)?;
        let Some(n_w1) = d.checked_mul(hidden) else {
            return Err(Error::parse(4, 1, "dimensions overflow"));
        };
        let w1 = parse_values(field("w1")?, n_w1)?;
        let b1 = parse_values(field("b1")?, hidden)?;
        let w2 = parse_values(field("w2")?, hidden)?;
        let b2 = parse_values(field("b2")?, 1)?[0];
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(
                ln,
                1,
                format!("unexpected trailing content `{extra}`"),
            ));
        }
        Ok(ModelParams {
            d,
            hidden,
            w1,
            b1,
            w2,
            b2,
            task,
        })
    }
}

const CHECKPOINT_MAGIC: &str = "causal-rank-model v1";

fn parse_dim((ln, parts): (u64, Vec<&str>)) -> Result<usize> {
    match parts.as_slice() {
        [v] => match v.parse::<usize>() {
            Ok(n) if (1..=1 << 20).contains(&n) => Ok(n),
            _ => Err(Error::parse(ln, 1, format!("invalid dimension `{v}`"))),
        },
        _ => Err(Error::parse(ln, 1, "expected a single dimension")),
    }
}

fn parse_values((ln, parts): (u64, Vec<&str>), expected: usize) -> Result<Vec<f64>> {
    if parts.len() != expected {
        return Err(Error::parse(
            ln,
            1,
            format!("expected {expected} values, found {}", parts.len()),
        ));
    }
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| match p.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::parse(ln, i + 2, format!("invalid number `{p}`"))),
        })
        .collect()
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean data loss over a batch plus `weight_decay * ||W||^2 / 2` (biases
/// excluded), with its exact gradient. Regression uses squared error; binary
/// uses cross-entropy on the logit and accepts soft targets in `[0, 1]`.
pub fn loss_and_grad(
    params: &ModelParams,
    xs: &[&[f64]],
    ys: &[f64],
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "batch needs matching non-empty inputs ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if ys.iter().any(|y| !y.is_finite()) || xs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("non-finite value in batch".into()));
    }
    if params.task == Task::Binary && ys.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(Error::invalid("binary targets must lie in [0, 1]"));
    }
    if xs.iter().any(|x| x.len() != params.d) {
        return Err(Error::invalid("batch dimension mismatch"));
    }
    let mut grads = params.zeros_like();
    let data = pointwise_batch(params, xs, ys, &mut grads);
    let loss = data + add_weight_decay(params, weight_decay, &mut grads);
    Ok((loss, grads))
}

/// Data loss of a batch; accumulates its gradient into zeroed `grads`.
fn pointwise_batch(params: &ModelParams, xs: &[&[f64]], ys: &[f64], grads: &mut Gradients) -> f64 {
    let scale = 1.0 / xs.len() as f64;
    let mut h = vec![0.0; params.hidden];
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = params.logit_into(x, &mut h);
        let (loss, dz) = pointwise_loss(params.task, z, y);
        total += loss;
        params.backward_into(x, &h, dz * scale, grads);
    }
    total * scale
}

fn pointwise_loss(task: Task, z: f64, y: f64) -> (f64, f64) {
    match task {
        Task::Regression => {
            let r = z - y;
            (r * r, 2.0 * r)
        }
        Task::Binary => (bce_with_logit(z, y), sigmoid(z) - y),
    }
}

/// Mean data loss without any penalty, as used for validation.
pub fn data_loss(params: &ModelParams, xs: &[&[f64]], ys: &[f64]) -> f64 {
    let mut h = vec![0.0; params.hidden];
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| pointwise_loss(params.task, params.logit_into(x, &mut h), y).0)
        .sum();
    total / xs.len() as f64
}

fn add_weight_decay(params: &ModelParams, weight_decay: f64, grads: &mut Gradients) -> f64 {
    if weight_decay == 0.0 {
        return 0.0;
    }
    for (g, w) in grads.w1.iter_mut().zip(&params.w1) {
        *g += weight_decay * w;
    }
    for (g, w) in grads.w2.iter_mut().zip(&params.w2) {
        *g += weight_decay * w;
    }
    0.5 * weight_decay * params.weight_norm_sq()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: vec![0.0; params.n_params()],
            v: vec![0.0; params.n_params()],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let mut offset = 0;
    for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
        let m = &mut state.m[offset..offset + p.len()];
        let v = &mut state.v[offset..offset + p.len()];
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        offset += p.len();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 64,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 128,
            max_epochs: 50,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::invalid(
                "hidden, batch_size, patience and max_epochs must be at least 1",
            ));
        }
        Ok(())
    }
}

/// A training problem driven by [`train`]: it prepares an epoch's batches,
/// evaluates the data loss and gradient of a batch, and scores validation.
pub trait Objective {
    /// Called before each epoch with the trainer's shuffling stream.
    fn begin_epoch(&mut self, epoch: usize, rng: &mut StreamRng);

    fn n_batches(&self) -> usize;

    /// Mean data loss of `batch`; its gradient is accumulated into `grads`,
    /// which the caller zeroes.
    fn batch_loss_grad(&self, params: &ModelParams, batch: usize, grads: &mut Gradients) -> f64;

    fn validation_loss(&self, params: &ModelParams) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// Checkpoint with the lowest validation loss.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss after each completed epoch (1-based epochs).
    pub val_history: Vec<f64>,
}

impl FitOutcome {
    pub fn epochs_run(&self) -> usize {
        self.val_history.len()
    }
}

/// Mini-batch Adam with early stopping: halts once validation loss has not
/// improved for `patience` consecutive epochs, or at `max_epochs`, and
/// returns the best checkpoint.
pub fn train<O: Objective>(
    init: ModelParams,
    config: &TrainConfig,
    objective: &mut O,
) -> Result<FitOutcome> {
    config.validate()?;
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut shuffle = rng::stream(config.seed, rng::SHUFFLE);

    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        objective.begin_epoch(epoch, &mut shuffle);
        for b in 0..objective.n_batches() {
            grads.fill_zero();
            let data = objective.batch_loss_grad(&params, b, &mut grads);
            let loss = data + add_weight_decay(&params, config.weight_decay, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite training loss in batch {b}"),
                });
            }
            adam_step(&mut params, &grads, &mut state, config.learning_rate);
        }
        let val = objective.validation_loss(&params);
        if !val.is_finite() || !params.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "non-finite validation loss".into(),
            });
        }
        history.push(val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best.clone_from(&params);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(FitOutcome {
        params: best,
        best_epoch,
        best_val_loss: best_val,
        val_history: history,
    })
}

/// Pointwise supervised objective with shuffled mini-batches.
struct Pointwise<'a> {
    train_x: &'a [&'a [f64]],
    train_y: &'a [f64],
    val_x: &'a [&'a [f64]],
    val_y: &'a [f64],
    batch_size: usize,
    order: Vec<usize>,
}

impl Objective for Pointwise<'_> {
    fn begin_epoch(&mut self, _epoch: usize, rng: &mut StreamRng) {
        self.order.shuffle(rng);
    }

    fn n_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn batch_loss_grad(&self, params: &ModelParams, batch: usize, grads: &mut Gradients) -> f64 {
        let lo = batch * self.batch_size;
        let hi = (lo + self.batch_size).min(self.order.len());
        let idx = &self.order[lo..hi];
        let xs: Vec<&[f64]> = idx.iter().map(|&i| self.train_x[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| self.train_y[i]).collect();
        pointwise_batch(params, &xs, &ys, grads)
    }

    fn validation_loss(&self, params: &ModelParams) -> f64 {
        data_loss(params, self.val_x, self.val_y)
    }
}

/// Fits a fresh network to `(train_x, train_y)` with early stopping on
/// `(val_x, val_y)`.
pub fn fit(
    train_x: &[&[f64]],
    train_y: &[f64],
    val_x: &[&[f64]],
    val_y: &[f64],
    task: Task,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::invalid(
            "training and validation sets must be non-empty",
        ));
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::invalid("inputs and targets differ in length"));
    }
    let d = train_x[0].len();
    if train_x.iter().chain(val_x).any(|x| x.len() != d) {
        return Err(Error::invalid("inconsistent input dimensions"));
    }
    if train_y.iter().chain(val_y).any(|y| !y.is_finite()) {
        return Err(Error::Numeric("non-finite target".into()));
    }
    if task == Task::Binary
        && train_y
            .iter()
            .chain(val_y)
            .any(|y| !(0.0..=1.0).contains(y))
    {
        return Err(Error::invalid("binary targets must lie in [0, 1]"));
    }
    config.validate()?;
    let init = ModelParams::init(d, config.hidden, task, config.seed)?;
    let mut objective = Pointwise {
        train_x,
        train_y,
        val_x,
        val_y,
        batch_size: config.batch_size,
        order: (0..train_x.len()).collect(),
    };
    train(init, config, &mut objective)
}
