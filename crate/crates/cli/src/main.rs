use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use causal_rank::bench::{self, Family, Hyper, SweepOverlapSpec, SweepPairsSpec};
use causal_rank::config::{BenchmarkSpec, Method};
use causal_rank::dgp::{generate, overlap_measure, DgpConfig};
use causal_rank::eval::evaluate;
use causal_rank::io;
use causal_rank::nuisance::{DEFAULT_CLIP, DEFAULT_FOLDS};
use causal_rank::orthocheck::{
    verify_minimizer, verify_orthogonality, DiscretePopulation, DEFAULT_STEP,
};
use causal_rank::ranker::{DEFAULT_PAIR_FRACTION, KAPPA_GRID};
use causal_rank::Error;

#[derive(Parser)]
#[command(
    name = "causal-rank",
    version,
    about = "Learning to rank treatment effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and its ground truth.
    Generate(GenerateArgs),
    /// Run a benchmark grid over methods, training sizes and seeds.
    Benchmark(BenchmarkArgs),
    /// Rank-Learner test AUTOC against the fraction of pairs sampled per epoch.
    SweepPairs(SweepPairsArgs),
    /// Test AUTOC of every method as treatment overlap shrinks.
    SweepOverlap(SweepOverlapArgs),
    /// Check orthogonality and minimizers of the population losses.
    OrthoCheck(OrthoArgs),
    /// Score a ranking against ground truth.
    Evaluate(EvaluateArgs),
    /// Fit a method on a dataset file and score another.
    Fit(FitArgs),
    /// Seeded random search over network hyperparameters.
    Tune(TuneArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.6)]
    noise_sd: f64,
    /// Dataset CSV to write.
    #[arg(long, default_value = "dataset.csv")]
    data: PathBuf,
    /// Ground-truth CSV to write.
    #[arg(long, default_value = "ground_truth.csv")]
    truth: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    kappa_grid: Option<Vec<String>>,
    #[arg(long)]
    pair_fraction: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    test_size: Option<String>,
    #[arg(long)]
    test_seed: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepPairsArgs {
    #[arg(long, default_value_t = bench::SWEEP_PAIRS_N)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = bench::SWEEP_FRACTIONS)]
    fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = KAPPA_GRID)]
    kappa_grid: Vec<f64>,
    #[arg(long, default_value_t = causal_rank::config::DEFAULT_TEST_SEED)]
    test_seed: u64,
    /// CSV to write; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepOverlapArgs {
    #[arg(long, default_value_t = bench::SWEEP_OVERLAP_N)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = bench::OVERLAP_ALPHAS)]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', default_values_t = KAPPA_GRID)]
    kappa_grid: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_PAIR_FRACTION)]
    pair_fraction: f64,
    #[arg(long, default_value_t = causal_rank::config::DEFAULT_TEST_SEED)]
    test_seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OrthoArgs {
    /// Population fixture; the bundled five-point population when absent.
    #[arg(long)]
    population: Option<PathBuf>,
    /// Smoothness values to check; repeat for several.
    #[arg(long = "kappa", default_values_t = [1.0])]
    kappas: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    directions: usize,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report to write; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Dataset CSV to score; defaults to the training data.
    #[arg(long)]
    predict: Option<PathBuf>,
    #[arg(long, default_value = "rank_learner")]
    method: String,
    #[arg(long, value_delimiter = ',', default_values_t = KAPPA_GRID)]
    kappa_grid: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_PAIR_FRACTION)]
    pair_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = DEFAULT_CLIP)]
    clip: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scores CSV (`index,score`) to write.
    #[arg(long, default_value = "scores.csv")]
    scores: PathBuf,
    /// Optional cross-fitted nuisance dump for the training data.
    #[arg(long)]
    nuisance_dump: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// `nuisance`, a method name, or `all`.
    #[arg(long, default_value = "all")]
    family: String,
    #[arg(long, default_value_t = bench::TUNE_SEED)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure kinds mapped to exit codes.
enum Failure {
    /// A check or benchmark cell failed.
    Check(String),
    /// Bad input, bad usage or I/O.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn emit(output: Option<&Path>, body: &str) -> CmdResult {
    match output {
        Some(p) => io::save_text(p, body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, Failure> {
    names
        .iter()
        .map(|s| s.parse::<Method>().map_err(Failure::from))
        .collect()
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let cfg = DgpConfig::new(a.n, a.seed)
        .with_alpha(a.alpha)
        .with_noise_sd(a.noise_sd);
    let (data, truth) = generate(&cfg)?;
    io::save_dataset(&a.data, &data)?;
    io::save_ground_truth(&a.truth, &truth)?;
    let summary = json!({
        "n": data.len(),
        "n_treated": data.n_treated(),
        "overlap": overlap_measure(&truth)?,
        "data": a.data,
        "truth": a.truth,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn benchmark_spec(a: &BenchmarkArgs) -> Result<BenchmarkSpec, Failure> {
    let mut spec = match &a.config {
        Some(p) => BenchmarkSpec::parse(&io::load_text(p)?)?,
        None => BenchmarkSpec::default(),
    };
    let lists = [
        ("methods", &a.methods),
        ("n_grid", &a.n_grid),
        ("seeds", &a.seeds),
        ("kappa_grid", &a.kappa_grid),
    ];
    for (key, v) in lists {
        if let Some(v) = v {
            spec.set(key, &v.join(","))?;
        }
    }
    let scalars = [
        ("pair_fraction", &a.pair_fraction),
        ("alpha", &a.alpha),
        ("test_size", &a.test_size),
        ("test_seed", &a.test_seed),
    ];
    for (key, v) in scalars {
        if let Some(v) = v {
            spec.set(key, v)?;
        }
    }
    if let Some(dir) = &a.output_dir {
        spec.output_dir = Some(dir.clone());
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_benchmark(a: BenchmarkArgs) -> CmdResult {
    let spec = benchmark_spec(&a)?;
    let result = bench::run_benchmark(&spec)?;
    if let Some(dir) = &spec.output_dir {
        bench::write_benchmark(dir, &spec, &result)?;
    }
    print!("{}", bench::aggregate_csv(&result.aggregate));
    report_failures(&result.failures)
}

fn report_failures(failures: &[bench::CellFailure]) -> CmdResult {
    for f in failures {
        eprintln!(
            "cell failed: {} n={} seed={}: {}",
            f.method, f.n, f.seed, f.message
        );
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} cell(s) failed", failures.len())))
    }
}

fn cmd_sweep_pairs(a: SweepPairsArgs) -> CmdResult {
    let spec = SweepPairsSpec {
        n: a.n,
        fractions: a.fractions,
        seeds: a.seeds,
        kappa_grid: a.kappa_grid,
        test_seed: a.test_seed,
        ..SweepPairsSpec::default()
    };
    let r = bench::sweep_pairs(&spec)?;
    emit(a.output.as_deref(), &bench::sweep_pairs_csv(&r.rows))?;
    report_failures(&r.failures)
}

fn cmd_sweep_overlap(a: SweepOverlapArgs) -> CmdResult {
    let methods = match &a.methods {
        Some(m) => parse_methods(m)?,
        None => Method::ALL.to_vec(),
    };
    let spec = SweepOverlapSpec {
        n: a.n,
        alphas: a.alphas,
        seeds: a.seeds,
        methods,
        kappa_grid: a.kappa_grid,
        pair_fraction: a.pair_fraction,
        test_seed: a.test_seed,
        ..SweepOverlapSpec::default()
    };
    let r = bench::sweep_overlap(&spec)?;
    emit(a.output.as_deref(), &bench::sweep_overlap_csv(&r.rows))?;
    report_failures(&r.failures)
}

fn cmd_ortho_check(a: OrthoArgs) -> CmdResult {
    let pop = match &a.population {
        Some(p) => DiscretePopulation::from_fixture(&io::load_text(p)?)?,
        None => DiscretePopulation::canonical5(),
    };
    pop.validate_for_check()?;
    let mut sections = Vec::new();
    let mut all_pass = true;
    for &kappa in &a.kappas {
        let orth = verify_orthogonality(&pop, kappa, a.directions, a.step, a.seed)?;
        let min = verify_minimizer(&pop, kappa, a.seed)?;
        all_pass &= orth.pass && min.pass;
        if !orth.pass {
            eprintln!(
                "kappa {kappa}: orthogonality failed (orth max {:.3e}, soft median {:.3e})",
                orth.orth_max_abs, orth.soft_median_abs
            );
        }
        if !min.pass {
            eprintln!(
                "kappa {kappa}: minimizer check failed (stationarity {}, recovery {} slope {:.4} r2 {:.6}, flatness {})",
                min.stationarity_pass, min.recovery_pass, min.slope, min.r_squared, min.flatness_pass
            );
        }
        sections.push(json!({ "kappa": kappa, "orthogonality": orth, "minimizer": min }));
    }
    let report = json!({ "pass": all_pass, "population": pop, "sections": sections });
    emit(
        a.output.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    if all_pass {
        Ok(())
    } else {
        Err(Failure::Check("population checks failed".into()))
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let scores = io::load_scores(&a.scores)?;
    let truth = io::load_ground_truth(&a.truth)?;
    if scores.len() != truth.len() {
        return Err(Failure::Usage(format!(
            "{} scores but {} ground-truth rows",
            scores.len(),
            truth.len()
        )));
    }
    let report = evaluate(&scores, &truth)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_fit(a: FitArgs) -> CmdResult {
    let method: Method = a.method.parse()?;
    let data = io::load_dataset(&a.data)?;
    let cell = bench::CellData::from_dataset(
        &data,
        a.seed,
        a.folds,
        a.clip,
        &bench::frozen(Family::Nuisance),
    )?;
    if let Some(p) = &a.nuisance_dump {
        io::save_nuisance(p, &io::nuisance_rows(&cell.nuisances, &data)?)?;
    }
    let trained = bench::train_method(
        &cell,
        method,
        &bench::frozen(Family::Method(method)),
        &a.kappa_grid,
        a.pair_fraction,
    )?;
    let target = match &a.predict {
        Some(p) => io::load_dataset(p)?,
        None => data,
    };
    io::save_scores(&a.scores, &trained.scorer.score_dataset(&target))?;
    let summary = json!({
        "method": method,
        "kappa_selected": trained.kappa,
        "validation_criterion": trained.criterion,
        "scores": a.scores,
        "n_scored": target.len(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_tune(a: TuneArgs) -> CmdResult {
    let families: Vec<Family> = match a.family.as_str() {
        "all" => std::iter::once(Family::Nuisance)
            .chain(Method::ALL.into_iter().map(Family::Method))
            .collect(),
        "nuisance" => vec![Family::Nuisance],
        m => vec![Family::Method(m.parse()?)],
    };
    let reports = families
        .into_iter()
        .map(|f| bench::tune(f, a.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let best: Vec<(&str, &Hyper, Option<f64>)> = reports
        .iter()
        .map(|r| (r.family.as_str(), &r.best_draw().hyper, r.best_draw().kappa))
        .collect();
    for (family, h, kappa) in &best {
        eprintln!("{family}: {h:?} kappa={kappa:?}");
    }
    emit(
        a.output.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&reports)?),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::SweepPairs(a) => cmd_sweep_pairs(a),
        Command::SweepOverlap(a) => cmd_sweep_overlap(a),
        Command::OrthoCheck(a) => cmd_ortho_check(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Tune(a) => cmd_tune(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
