//! Synthetic benchmark: grids over (method, n, seed), pair-fraction and
//! overlap sweeps, hyperparameter search, and result files.
//!
//! For training size `n` and seed `s` a cell draws two independent samples
//! from data seed `2s` (see [`generate_split_samples`]): nuisance models are
//! cross-fitted on the first, the second is split 80/20 for second-stage
//! training and validation. All methods at the same `(n, s)` share those
//! nuisances and that split. Every cell is scored on one test set drawn from
//! `test_seed`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{train_dr_learner_on, train_t_learner};
use crate::config::{BenchmarkSpec, Method};
use crate::dgp::{
    generate, generate_split_samples, overlap_measure, partition, Dataset, DgpConfig, GroundTruth,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, select_best};
use crate::io;
use crate::math::{mean, sd};
use crate::nn::{self, TrainConfig};
use crate::nuisance::{
    cross_fit, DrScores, NuisanceEstimates, Nuisances, DEFAULT_CLIP, DEFAULT_FOLDS,
};
use crate::ranker::{
    train_ranker, LabelKind, RankConfig, Scorer, ScoringModel, DEFAULT_LABEL_CLIP, KAPPA_GRID,
};
use crate::rng;

pub const THREADS_ENV: &str = "CAUSAL_RANK_THREADS";

/// Network hyperparameters shared by one family of models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Hyper {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        }
    }
}

pub const HIDDEN_CHOICES: [usize; 2] = [64, 128];
pub const LR_CHOICES: [f64; 4] = [1e-4, 3e-4, 5e-4, 1e-3];
pub const WD_CHOICES: [f64; 3] = [0.0, 1e-5, 1e-4];
pub const BATCH_CHOICES: [usize; 2] = [128, 256];

/// Model families tuned separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Nuisance,
    Method(Method),
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Nuisance => "nuisance",
            Family::Method(m) => m.as_str(),
        }
    }
}

/// Hyperparameters frozen from [`tune`] (seed [`TUNE_SEED`]).
pub fn frozen(family: Family) -> Hyper {
    let h = |hidden, learning_rate, weight_decay, batch_size| Hyper {
        hidden,
        learning_rate,
        weight_decay,
        batch_size,
    };
    match family {
        Family::Nuisance => h(128, 1e-3, 0.0, 256),
        Family::Method(Method::TLearner) => h(128, 1e-3, 1e-4, 256),
        Family::Method(Method::DrLearner) => h(128, 5e-4, 1e-4, 128),
        Family::Method(Method::PluginRanker) => h(128, 3e-4, 1e-5, 128),
        Family::Method(Method::RankLearner) => h(128, 1e-3, 1e-4, 256),
    }
}

fn method_index(m: Method) -> u64 {
    Method::ALL
        .iter()
        .position(|&x| x == m)
        .expect("known method") as u64
}

/// Pinned test sample.
pub fn test_set(size: usize, seed: u64, alpha: f64) -> Result<(Dataset, GroundTruth)> {
    generate(&DgpConfig::new(size, seed).with_alpha(alpha))
}

/// Everything the methods of one `(n, seed)` cell share.
pub struct CellData {
    pub n: usize,
    pub seed: u64,
    pub nuisances: NuisanceEstimates,
    pub train: Dataset,
    pub val: Dataset,
    pub train_eta: Vec<Nuisances>,
    pub val_eta: Vec<Nuisances>,
    pub val_dr: DrScores,
    cell_seed: u64,
}

impl CellData {
    pub fn prepare(n: usize, seed: u64, alpha: f64, nuisance: &Hyper) -> Result<Self> {
        let cell_seed = rng::derive(seed, n as u64);
        let cfg = DgpConfig::new(n, seed.wrapping_mul(2)).with_alpha(alpha);
        let ((nuis_data, _), (stage2, _)) = generate_split_samples(&cfg)?;
        let nuisances = cross_fit(
            &nuis_data,
            DEFAULT_FOLDS,
            &nuisance.train_config(rng::derive(cell_seed, 1)),
            DEFAULT_CLIP,
        )?;
        let split = partition(stage2.len(), rng::derive(cell_seed, 2))?;
        let train = stage2.subset(&split.train);
        let val = stage2.subset(&split.val);
        let train_eta = nuisances.predict_dataset(&train);
        let val_eta = nuisances.predict_dataset(&val);
        let val_dr = DrScores::compute(&val, &val_eta)?;
        Ok(CellData {
            n,
            seed,
            nuisances,
            train,
            val,
            train_eta,
            val_eta,
            val_dr,
            cell_seed,
        })
    }

    /// Single-sample variant for user data: nuisances are cross-fitted on
    /// `data` and second-stage models use the out-of-fold estimates of an
    /// 80/20 split of the same units.
    pub fn from_dataset(
        data: &Dataset,
        seed: u64,
        folds: usize,
        clip_eps: f64,
        nuisance: &Hyper,
    ) -> Result<Self> {
        let cell_seed = rng::derive(seed, data.len() as u64);
        let nuisances = cross_fit(
            data,
            folds,
            &nuisance.train_config(rng::derive(cell_seed, 1)),
            clip_eps,
        )?;
        let split = partition(data.len(), rng::derive(cell_seed, 2))?;
        let eta = nuisances.in_sample();
        let pick = |idx: &[usize]| idx.iter().map(|&i| eta[i]).collect::<Vec<_>>();
        let train = data.subset(&split.train);
        let val = data.subset(&split.val);
        let train_eta = pick(&split.train);
        let val_eta = pick(&split.val);
        let val_dr = DrScores::compute(&val, &val_eta)?;
        Ok(CellData {
            n: data.len(),
            seed,
            nuisances,
            train,
            val,
            train_eta,
            val_eta,
            val_dr,
            cell_seed,
        })
    }

    pub fn model_seed(&self, method: Method) -> u64 {
        rng::derive(self.cell_seed, 10 + method_index(method))
    }
}

/// A trained method together with its selected smoothness, if any.
pub struct Trained {
    pub scorer: Box<dyn Scorer + Send + Sync>,
    pub kappa: Option<f64>,
    /// Validation criterion: approximate AUTOC for rankers, validation loss
    /// for CATE baselines.
    pub criterion: f64,
}

/// Trains `method` on a cell. Rankers sweep `kappa_grid` and keep the
/// candidate with the best validation approximate AUTOC.
pub fn train_method(
    cell: &CellData,
    method: Method,
    hyper: &Hyper,
    kappa_grid: &[f64],
    pair_fraction: f64,
) -> Result<Trained> {
    let train_cfg = hyper.train_config(cell.model_seed(method));
    match method {
        Method::TLearner => {
            let model = train_t_learner(&cell.train, &cell.val, &train_cfg)?;
            let criterion = t_learner_val_loss(&model, &cell.val);
            Ok(Trained {
                scorer: Box::new(model),
                kappa: None,
                criterion,
            })
        }
        Method::DrLearner => {
            let model = train_dr_learner_on(
                &cell.train,
                &cell.train_eta,
                &cell.val,
                &cell.val_eta,
                &train_cfg,
            )?;
            let criterion = nn::data_loss(&model.params, &cell.val.covariates(), &cell.val_dr.phi);
            Ok(Trained {
                scorer: Box::new(model),
                kappa: None,
                criterion,
            })
        }
        Method::PluginRanker | Method::RankLearner => {
            let kind = if method == Method::RankLearner {
                LabelKind::Orthogonal
            } else {
                LabelKind::PlugIn
            };
            let candidates = kappa_grid
                .iter()
                .map(|&kappa| {
                    let config = RankConfig {
                        kappa,
                        pair_fraction,
                        clip_eps_label: DEFAULT_LABEL_CLIP,
                        train: train_cfg.clone(),
                    };
                    let out = train_ranker(
                        &cell.train,
                        &cell.train_eta,
                        &cell.val,
                        &cell.val_eta,
                        kind,
                        &config,
                    )?;
                    Ok((kappa, ScoringModel { params: out.params }))
                })
                .collect::<Result<Vec<_>>>()?;
            let best = select_best(candidates, &cell.val.covariates(), &cell.val_dr)?;
            Ok(Trained {
                scorer: Box::new(best.scorer),
                kappa: Some(best.config),
                criterion: best.criteria[best.index],
            })
        }
    }
}

fn t_learner_val_loss(model: &crate::baselines::TLearner, val: &Dataset) -> f64 {
    let arm_loss = |treated: bool, params: &nn::ModelParams| {
        let arm = val.arm(treated);
        nn::data_loss(params, &arm.covariates(), &arm.outcomes())
    };
    arm_loss(false, &model.mu0) + arm_loss(true, &model.mu1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub kappa_selected: Option<f64>,
    pub autoc: f64,
    pub policy_value: f64,
    pub spearman: f64,
    pub wall_time_seconds: f64,
}

impl RunRecord {
    /// Equality ignoring wall time.
    pub fn same_result(&self, other: &RunRecord) -> bool {
        RunRecord {
            wall_time_seconds: 0.0,
            ..self.clone()
        } == RunRecord {
            wall_time_seconds: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub message: String,
}

fn run_on_cell(
    cell: &CellData,
    method: Method,
    kappa_grid: &[f64],
    pair_fraction: f64,
    test: &(Dataset, GroundTruth),
) -> Result<RunRecord> {
    let start = Instant::now();
    let trained = train_method(
        cell,
        method,
        &frozen(Family::Method(method)),
        kappa_grid,
        pair_fraction,
    )?;
    let scores = trained.scorer.score_dataset(&test.0);
    let report = evaluate(&scores, &test.1)?;
    Ok(RunRecord {
        method,
        n: cell.n,
        seed: cell.seed,
        kappa_selected: trained.kappa,
        autoc: report.autoc,
        policy_value: report.mean_policy_value,
        spearman: report.spearman_vs_truth,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub autoc: f64,
    pub policy_value: f64,
}

pub fn oracle_metrics(truth: &GroundTruth) -> Result<OracleMetrics> {
    let r = evaluate(&truth.tau, truth)?;
    Ok(OracleMetrics {
        autoc: r.autoc,
        policy_value: r.mean_policy_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub n: usize,
    pub autoc_mean: f64,
    pub autoc_sd: f64,
    pub pv_mean: f64,
    pub pv_sd: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
    pub aggregate: Vec<AggregateRow>,
    pub oracle: OracleMetrics,
}

impl BenchmarkResult {
    pub fn mean_autoc(&self, method: Method, n: usize) -> Option<f64> {
        self.aggregate
            .iter()
            .find(|r| r.method == method.as_str() && r.n == n)
            .map(|r| r.autoc_mean)
    }
}

/// Mean and sample sd per `(method, n)` in spec order, plus an oracle row per `n`.
pub fn aggregate(
    records: &[RunRecord],
    spec: &BenchmarkSpec,
    oracle: &OracleMetrics,
) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &n in &spec.n_grid {
        for &method in &spec.methods {
            let sel: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.method == method && r.n == n)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let a: Vec<f64> = sel.iter().map(|r| r.autoc).collect();
            let p: Vec<f64> = sel.iter().map(|r| r.policy_value).collect();
            rows.push(AggregateRow {
                method: method.to_string(),
                n,
                autoc_mean: mean(&a),
                autoc_sd: sd(&a),
                pv_mean: mean(&p),
                pv_sd: sd(&p),
                n_seeds: sel.len(),
            });
        }
        rows.push(AggregateRow {
            method: "oracle".into(),
            n,
            autoc_mean: oracle.autoc,
            autoc_sd: 0.0,
            pv_mean: oracle.policy_value,
            pv_sd: 0.0,
            n_seeds: spec.seeds.len(),
        });
    }
    rows
}

/// Worker pool capped by `CAUSAL_RANK_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::invalid(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

type CellResult = std::result::Result<RunRecord, CellFailure>;

/// Runs `methods` on every `(n, seed)` cell; a failing cell is recorded and
/// the rest of the grid continues.
fn run_cells(
    grid: &[(usize, u64)],
    methods: &[Method],
    alpha: f64,
    kappa_grid: &[f64],
    pair_fraction: f64,
    test: &(Dataset, GroundTruth),
) -> Result<Vec<CellResult>> {
    let pool = thread_pool()?;
    let nuisance = frozen(Family::Nuisance);
    let nested: Vec<Vec<CellResult>> = pool.install(|| {
        grid.par_iter()
            .map(|&(n, seed)| {
                let fail = |method: Method, e: &Error| CellFailure {
                    method,
                    n,
                    seed,
                    message: e.to_string(),
                };
                match CellData::prepare(n, seed, alpha, &nuisance) {
                    Err(e) => methods.iter().map(|&m| Err(fail(m, &e))).collect(),
                    Ok(cell) => methods
                        .par_iter()
                        .map(|&m| {
                            run_on_cell(&cell, m, kappa_grid, pair_fraction, test)
                                .map_err(|e| fail(m, &e))
                        })
                        .collect(),
                }
            })
            .collect()
    });
    Ok(nested.into_iter().flatten().collect())
}

pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkResult> {
    spec.validate()?;
    let test = test_set(spec.test_size, spec.test_seed, spec.alpha)?;
    let oracle = oracle_metrics(&test.1)?;
    let grid: Vec<(usize, u64)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| spec.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results = run_cells(
        &grid,
        &spec.methods,
        spec.alpha,
        &spec.kappa_grid,
        spec.pair_fraction,
        &test,
    )?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let aggregate = aggregate(&records, spec, &oracle);
    Ok(BenchmarkResult {
        records,
        failures,
        aggregate,
        oracle,
    })
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|k| format!("{k:?}")).unwrap_or_default()
}

pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "n",
        "seed",
        "kappa_selected",
        "autoc",
        "policy_value",
        "spearman",
    ])
    .expect("in-memory write");
    for r in records {
        w.write_record([
            r.method.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
            opt_f64(r.kappa_selected),
            format!("{:?}", r.autoc),
            format!("{:?}", r.policy_value),
            format!("{:?}", r.spearman),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    if rows.is_empty() {
        w.write_record([
            "method",
            "n",
            "autoc_mean",
            "autoc_sd",
            "pv_mean",
            "pv_sd",
            "n_seeds",
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

/// Writes `config.txt`, `metrics.csv`, `aggregate.csv`, `failures.json` and
/// one JSON file per run under `runs/`.
pub fn write_benchmark(dir: &Path, spec: &BenchmarkSpec, result: &BenchmarkResult) -> Result<()> {
    create_dir(&dir.join("runs"))?;
    io::save_text(&dir.join("config.txt"), &spec.to_config_text())?;
    io::save_text(&dir.join("metrics.csv"), &metrics_csv(&result.records))?;
    io::save_text(
        &dir.join("aggregate.csv"),
        &aggregate_csv(&result.aggregate),
    )?;
    io::save_text(
        &dir.join("failures.json"),
        &serde_json::to_string_pretty(&result.failures)?,
    )?;
    for r in &result.records {
        let name = format!("{}_n{}_seed{}.json", r.method, r.n, r.seed);
        io::save_text(
            &dir.join("runs").join(name),
            &serde_json::to_string_pretty(r)?,
        )?;
    }
    Ok(())
}

/// Standard error of the mean; 0 for fewer than two values.
pub fn standard_error(v: &[f64]) -> f64 {
    if v.len() < 2 {
        0.0
    } else {
        sd(v) / (v.len() as f64).sqrt()
    }
}

pub const SWEEP_PAIRS_N: usize = 1000;
pub const SWEEP_FRACTIONS: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPairsSpec {
    pub n: usize,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub kappa_grid: Vec<f64>,
    pub alpha: f64,
    pub test_size: usize,
    pub test_seed: u64,
}

impl Default for SweepPairsSpec {
    fn default() -> Self {
        SweepPairsSpec {
            n: SWEEP_PAIRS_N,
            fractions: SWEEP_FRACTIONS.to_vec(),
            seeds: (0..5).collect(),
            kappa_grid: KAPPA_GRID.to_vec(),
            alpha: 1.0,
            test_size: crate::config::DEFAULT_TEST_SIZE,
            test_seed: crate::config::DEFAULT_TEST_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPairsRow {
    pub pair_fraction: f64,
    pub autoc_mean: f64,
    pub autoc_se: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult<R> {
    pub rows: Vec<R>,
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
}

fn check_sweep(n: usize, seeds: &[u64], kappa_grid: &[f64], alpha: f64) -> Result<()> {
    let spec = BenchmarkSpec {
        n_grid: vec![n],
        seeds: seeds.to_vec(),
        kappa_grid: kappa_grid.to_vec(),
        alpha,
        ..BenchmarkSpec::default()
    };
    spec.validate()
}

/// Rank-Learner test AUTOC as a function of the fraction of pairs sampled
/// per epoch. Nuisances are fitted once per seed and shared by all fractions.
pub fn sweep_pairs(spec: &SweepPairsSpec) -> Result<SweepResult<SweepPairsRow>> {
    check_sweep(spec.n, &spec.seeds, &spec.kappa_grid, spec.alpha)?;
    if spec.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::invalid("pair fractions must lie in (0, 1]"));
    }
    let test = test_set(spec.test_size, spec.test_seed, spec.alpha)?;
    let pool = thread_pool()?;
    let nuisance = frozen(Family::Nuisance);
    let per_seed: Vec<Vec<(f64, CellResult)>> = pool.install(|| {
        spec.seeds
            .par_iter()
            .map(|&seed| {
                let cell = CellData::prepare(spec.n, seed, spec.alpha, &nuisance);
                spec.fractions
                    .par_iter()
                    .map(|&f| {
                        let r = cell
                            .as_ref()
                            .map_err(|e| Error::invalid(e.to_string()))
                            .and_then(|c| {
                                run_on_cell(c, Method::RankLearner, &spec.kappa_grid, f, &test)
                            });
                        (
                            f,
                            r.map_err(|e| CellFailure {
                                method: Method::RankLearner,
                                n: spec.n,
                                seed,
                                message: format!("pair_fraction {f}: {e}"),
                            }),
                        )
                    })
                    .collect()
            })
            .collect()
    });
    let flat: Vec<(f64, CellResult)> = per_seed.into_iter().flatten().collect();
    let mut rows = Vec::new();
    for &f in &spec.fractions {
        let a: Vec<f64> = flat
            .iter()
            .filter(|(g, r)| *g == f && r.is_ok())
            .map(|(_, r)| r.as_ref().expect("filtered").autoc)
            .collect();
        rows.push(SweepPairsRow {
            pair_fraction: f,
            autoc_mean: if a.is_empty() { f64::NAN } else { mean(&a) },
            autoc_se: standard_error(&a),
            n_seeds: a.len(),
        });
    }
    let (records, failures) = split_results(flat.into_iter().map(|(_, r)| r));
    Ok(SweepResult {
        rows,
        records,
        failures,
    })
}

fn split_results(results: impl Iterator<Item = CellResult>) -> (Vec<RunRecord>, Vec<CellFailure>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(x) => records.push(x),
            Err(f) => failures.push(f),
        }
    }
    (records, failures)
}

pub fn sweep_pairs_csv(rows: &[SweepPairsRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

pub const SWEEP_OVERLAP_N: usize = 500;
/// Overlap from about 0.49 down to below 0.05.
pub const OVERLAP_ALPHAS: [f64; 5] = [0.1, 1.0, 2.5, 5.0, 12.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOverlapSpec {
    pub n: usize,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub kappa_grid: Vec<f64>,
    pub pair_fraction: f64,
    pub test_size: usize,
    pub test_seed: u64,
}

impl Default for SweepOverlapSpec {
    fn default() -> Self {
        SweepOverlapSpec {
            n: SWEEP_OVERLAP_N,
            alphas: OVERLAP_ALPHAS.to_vec(),
            seeds: (0..5).collect(),
            methods: Method::ALL.to_vec(),
            kappa_grid: KAPPA_GRID.to_vec(),
            pair_fraction: crate::ranker::DEFAULT_PAIR_FRACTION,
            test_size: crate::config::DEFAULT_TEST_SIZE,
            test_seed: crate::config::DEFAULT_TEST_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOverlapRow {
    pub alpha: f64,
    pub overlap: f64,
    pub method: Method,
    pub autoc_mean: f64,
    pub autoc_se: f64,
    pub n_seeds: usize,
}

/// Test AUTOC of every method as overlap shrinks. Covariates and outcome
/// noise stay fixed per seed; only the treatment assignment changes with
/// `alpha`. Overlap is measured on the test covariates.
pub fn sweep_overlap(spec: &SweepOverlapSpec) -> Result<SweepResult<SweepOverlapRow>> {
    for &a in &spec.alphas {
        check_sweep(spec.n, &spec.seeds, &spec.kappa_grid, a)?;
    }
    if spec.methods.is_empty() {
        return Err(Error::invalid("no methods to sweep"));
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &alpha in &spec.alphas {
        let test = test_set(spec.test_size, spec.test_seed, alpha)?;
        let overlap = overlap_measure(&test.1)?;
        let grid: Vec<(usize, u64)> = spec.seeds.iter().map(|&s| (spec.n, s)).collect();
        let results = run_cells(
            &grid,
            &spec.methods,
            alpha,
            &spec.kappa_grid,
            spec.pair_fraction,
            &test,
        )?;
        let (recs, fails) = split_results(results.into_iter());
        for &method in &spec.methods {
            let a: Vec<f64> = recs
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.autoc)
                .collect();
            rows.push(SweepOverlapRow {
                alpha,
                overlap,
                method,
                autoc_mean: if a.is_empty() { f64::NAN } else { mean(&a) },
                autoc_se: standard_error(&a),
                n_seeds: a.len(),
            });
        }
        records.extend(recs);
        failures.extend(fails.into_iter().map(|f| CellFailure {
            message: format!("alpha {alpha}: {}", f.message),
            ..f
        }));
    }
    Ok(SweepResult {
        rows,
        records,
        failures,
    })
}

pub fn sweep_overlap_csv(rows: &[SweepOverlapRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

pub const TUNE_SEED: u64 = 2024;
pub const TUNE_N: usize = 500;
pub const TUNE_DRAWS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneDraw {
    pub hyper: Hyper,
    pub kappa: Option<f64>,
    /// Validation criterion; lower is better for losses, higher for AUTOC.
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub family: String,
    pub seed: u64,
    pub maximize: bool,
    pub draws: Vec<TuneDraw>,
    pub best: usize,
}

impl TuneReport {
    pub fn best_draw(&self) -> &TuneDraw {
        &self.draws[self.best]
    }
}

/// Distinct configurations drawn uniformly from the search grid.
pub fn search_draws(seed: u64, count: usize) -> Vec<Hyper> {
    let mut all = Vec::new();
    for &hidden in &HIDDEN_CHOICES {
        for &learning_rate in &LR_CHOICES {
            for &weight_decay in &WD_CHOICES {
                for &batch_size in &BATCH_CHOICES {
                    all.push(Hyper {
                        hidden,
                        learning_rate,
                        weight_decay,
                        batch_size,
                    });
                }
            }
        }
    }
    all.shuffle(&mut rng::stream(seed, rng::SEARCH));
    all.truncate(count);
    all
}

/// Out-of-fold nuisance losses: control MSE of `mu0`, treated MSE of `mu1`
/// and cross-entropy of `e`.
pub fn nuisance_criterion(data: &Dataset, est: &NuisanceEstimates) -> f64 {
    let (mut l0, mut n0, mut l1, mut n1, mut le) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, o) in data.iter().enumerate() {
        if o.t {
            l1 += (o.y - est.mu1_hat[i]).powi(2);
            n1 += 1.0;
        } else {
            l0 += (o.y - est.mu0_hat[i]).powi(2);
            n0 += 1.0;
        }
        le += crate::math::bce(est.e_hat[i], o.t_f64());
    }
    l0 / n0 + l1 / n1 + le / data.len() as f64
}

/// Seeded random search for one family on a pinned `n = 500` task. Method
/// families use the frozen nuisance hyperparameters; rankers draw `kappa`
/// alongside the network settings.
pub fn tune(family: Family, seed: u64) -> Result<TuneReport> {
    let hypers = search_draws(rng::derive(seed, family_tag(family)), TUNE_DRAWS);
    let mut kappa_rng = rng::stream(rng::derive(seed, family_tag(family)), rng::CHECKS);
    let (draws, maximize) = match family {
        Family::Nuisance => {
            let cfg = DgpConfig::new(TUNE_N, seed);
            let (data, _) = generate(&cfg)?;
            let draws = hypers
                .into_iter()
                .map(|h| {
                    let est = cross_fit(&data, DEFAULT_FOLDS, &h.train_config(seed), DEFAULT_CLIP)?;
                    Ok(TuneDraw {
                        hyper: h,
                        kappa: None,
                        criterion: nuisance_criterion(&data, &est),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (draws, false)
        }
        Family::Method(method) => {
            let cell = CellData::prepare(TUNE_N, seed, 1.0, &frozen(Family::Nuisance))?;
            let draws = hypers
                .into_iter()
                .map(|h| {
                    let kappa = method
                        .is_ranker()
                        .then(|| *KAPPA_GRID.choose(&mut kappa_rng).expect("non-empty grid"));
                    let grid: Vec<f64> = kappa.into_iter().collect();
                    let t = train_method(
                        &cell,
                        method,
                        &h,
                        &grid,
                        crate::ranker::DEFAULT_PAIR_FRACTION,
                    )?;
                    Ok(TuneDraw {
                        hyper: h,
                        kappa,
                        criterion: t.criterion,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (draws, method.is_ranker())
        }
    };
    let mut best = 0;
    for (i, d) in draws.iter().enumerate() {
        let better = if maximize {
            d.criterion > draws[best].criterion
        } else {
            d.criterion < draws[best].criterion
        };
        if better {
            best = i;
        }
    }
    Ok(TuneReport {
        family: family.name().into(),
        seed,
        maximize,
        draws,
        best,
    })
}

fn family_tag(family: Family) -> u64 {
    match family {
        Family::Nuisance => 100,
        Family::Method(m) => 101 + method_index(m),
    }
}
