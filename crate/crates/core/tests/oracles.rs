//! Independent oracles: brute-force enumerations and finite differences that
//! do not share code with the library paths they check.

use causal_rank::dgp::{self, DgpConfig};
use causal_rank::eval;
use causal_rank::nn::{self, Task};
use causal_rank::nuisance::{DrScores, Nuisances};
use causal_rank::orthocheck::{self, DiscretePopulation, LossKind};
use causal_rank::ranker::{self, PairBatch, ScoringModel};
use causal_rank::rng;
use rand::Rng;

mod common;
use common::*;

#[test]
fn population_loss_matches_brute_force_enumeration() {
    let mut r = rng::stream(31, 0);
    let mut pops = vec![DiscretePopulation::canonical4()];
    for k in [2, 3, 4, 4, 3] {
        pops.push(random_population(k, &mut r));
    }
    for pop in &pops {
        for _ in 0..5 {
            let eta = if r.random_bool(0.3) {
                pop.true_eta()
            } else {
                perturbed_eta(pop, &mut r)
            };
            let g: Vec<f64> = (0..pop.k()).map(|_| r.random_range(-2.0..2.0)).collect();
            let kappa = [0.25, 0.5, 1.0, 2.0][r.random_range(0..4)];
            for kind in [
                LossKind::Cate,
                LossKind::Bin,
                LossKind::Soft,
                LossKind::Orth,
            ] {
                let lib = orthocheck::population_loss(kind, &g, &eta, pop, kappa).unwrap();
                let oracle = brute_force_loss(kind, &g, &eta, pop, kappa, 0.7);
                assert!((lib - oracle).abs() <= 1e-12, "{kind:?}: {lib} vs {oracle}");
            }
        }
    }
}

#[test]
fn orthogonal_and_soft_losses_agree_at_true_nuisances() {
    let mut r = rng::stream(32, 0);
    for pop in [
        DiscretePopulation::canonical4(),
        DiscretePopulation::canonical5(),
    ] {
        let eta = pop.true_eta();
        for _ in 0..100 {
            let g: Vec<f64> = (0..pop.k()).map(|_| r.random_range(-3.0..3.0)).collect();
            let kappa = r.random_range(0.2..3.0);
            let orth = orthocheck::population_loss(LossKind::Orth, &g, &eta, &pop, kappa).unwrap();
            let soft = orthocheck::population_loss(LossKind::Soft, &g, &eta, &pop, kappa).unwrap();
            assert!((orth - soft).abs() <= 1e-12);
        }
    }
}

#[test]
fn population_gradient_matches_finite_differences() {
    let mut r = rng::stream(33, 0);
    let h = 1e-5;
    for _ in 0..20 {
        let pop = random_population(4, &mut r);
        let eta = perturbed_eta(&pop, &mut r);
        let g: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        for kind in [
            LossKind::Cate,
            LossKind::Bin,
            LossKind::Soft,
            LossKind::Orth,
        ] {
            let grad = orthocheck::loss_gradient_g(kind, &g, &eta, &pop, 1.0).unwrap();
            for a in 0..4 {
                let mut gp = g.clone();
                let mut gm = g.clone();
                gp[a] += h;
                gm[a] -= h;
                let fd = (orthocheck::population_loss(kind, &gp, &eta, &pop, 1.0).unwrap()
                    - orthocheck::population_loss(kind, &gm, &eta, &pop, 1.0).unwrap())
                    / (2.0 * h);
                let scale = grad[a].abs().max(fd.abs());
                if scale < 1e-6 {
                    assert!((grad[a] - fd).abs() < 1e-9);
                } else {
                    assert!(
                        (grad[a] - fd).abs() / scale <= 1e-6,
                        "{kind:?}: {} vs {fd}",
                        grad[a]
                    );
                }
            }
        }
    }
}

#[test]
fn bin_loss_decreases_towards_its_infimum() {
    let pop = DiscretePopulation::canonical4();
    let eta = pop.true_eta();
    let tau = pop.tau();
    let losses: Vec<f64> = [1.0, 10.0, 100.0]
        .iter()
        .map(|m| {
            let g: Vec<f64> = tau.iter().map(|t| m * t).collect();
            orthocheck::population_loss(LossKind::Bin, &g, &eta, &pop, 1.0).unwrap()
        })
        .collect();
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
    assert!(losses[2] < 1e-3);
}

#[test]
fn minimizer_recovery_across_kappas() {
    let mut r = rng::stream(34, 0);
    let pops = [
        DiscretePopulation::canonical4(),
        random_population(4, &mut r),
    ];
    for pop in &pops {
        for kappa in [0.25, 0.5, 1.0, 2.0] {
            let rep = orthocheck::verify_minimizer(pop, kappa, 7).unwrap();
            assert!(
                rep.stationarity_pass && rep.recovery_pass && rep.pass,
                "{rep:?}"
            );
            assert!((rep.slope * kappa - 1.0).abs() <= 0.02);
            assert_eq!(rep.spearman, 1.0);
        }
    }
}

#[test]
fn tampered_population_is_rejected() {
    let text = DiscretePopulation::canonical5().to_fixture();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.len() - 1;
    let mut cells: Vec<String> = lines[last].split(',').map(String::from).collect();
    cells[3] = "0.999".into();
    lines[last] = cells.join(",");
    let pop = DiscretePopulation::from_fixture(&lines.join("\n")).unwrap();
    assert!(orthocheck::verify_orthogonality(&pop, 1.0, 20, 1e-3, 0).is_err());
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn oracle_autoc(order: &[usize], tau: &[f64]) -> f64 {
    let m = tau.len();
    let mean = tau.iter().sum::<f64>() / m as f64;
    (1..=m)
        .map(|k| order[..k].iter().map(|&i| tau[i]).sum::<f64>() / k as f64 - mean)
        .sum::<f64>()
        / m as f64
}

fn oracle_policy_value(order: &[usize], tau: &[f64], mu0: &[f64]) -> f64 {
    let m = tau.len() as f64;
    (0..=tau.len())
        .map(|k| {
            (0..tau.len())
                .map(|i| mu0[i] + if order[..k].contains(&i) { tau[i] } else { 0.0 })
                .sum::<f64>()
                / m
        })
        .sum::<f64>()
        / (m + 1.0)
}

#[test]
fn true_effect_ordering_maximizes_metrics_over_all_permutations() {
    let mut r = rng::stream(35, 0);
    for _ in 0..5 {
        let tau: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..2.0)).collect();
        let mu0: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let best_autoc = eval::autoc(&tau, &tau).unwrap();
        let best_pv = eval::mean_policy_value(&tau, &tau, &mu0).unwrap();
        let (mut max_a, mut max_v) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for perm in permutations(6) {
            // perm[i] is unit i's rank from the top
            let scores: Vec<f64> = perm.iter().map(|&p| -(p as f64)).collect();
            let mut order = vec![0; 6];
            for (i, &p) in perm.iter().enumerate() {
                order[p] = i;
            }
            let a = eval::autoc(&scores, &tau).unwrap();
            let v = eval::mean_policy_value(&scores, &tau, &mu0).unwrap();
            assert!((a - oracle_autoc(&order, &tau)).abs() < 1e-12);
            assert!((v - oracle_policy_value(&order, &tau, &mu0)).abs() < 1e-12);
            max_a = max_a.max(a);
            max_v = max_v.max(v);
        }
        assert!((max_a - best_autoc).abs() < 1e-12);
        assert!((max_v - best_pv).abs() < 1e-12);
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let mut r = rng::stream(36, 0);
    for inst in 0..50 {
        let task = if inst % 2 == 0 {
            Task::Regression
        } else {
            Task::Binary
        };
        let d = r.random_range(1..5);
        let hidden = r.random_range(1..8);
        let p = random_params(d, hidden, task, &mut r);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let xs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let ys: Vec<f64> = match task {
            Task::Regression => (0..6).map(|_| r.random_range(-2.0..2.0)).collect(),
            Task::Binary => (0..6).map(|_| r.random_range(0.0..1.0)).collect(),
        };
        let wd = if inst % 3 == 0 { 0.0 } else { 0.05 };
        let (_, grad) = nn::loss_and_grad(&p, &xs, &ys, wd).unwrap();
        let fd = finite_difference(&p, 1e-5, |q| nn::loss_and_grad(q, &xs, &ys, wd).unwrap().0);
        let err = relative_error(&grad.to_flat(), &fd);
        assert!(err <= 1e-4, "instance {inst}: relative error {err}");
    }
}

#[test]
fn pairwise_gradients_match_finite_differences() {
    let mut r = rng::stream(37, 0);
    for inst in 0..50 {
        let d = r.random_range(1..5);
        let hidden = r.random_range(1..8);
        let model = ScoringModel {
            params: random_params(d, hidden, Task::Regression, &mut r),
        };
        let n = 6;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let xs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let pairs = ranker::sample_pair_count(n, 8, &mut r).unwrap();
        let labels = (0..pairs.len())
            .map(|_| r.random_range(0.0001..0.9999))
            .collect();
        let batch = PairBatch { pairs, labels };
        let (_, grad) = ranker::pairwise_loss_and_grad(&model, &xs, &batch).unwrap();
        let fd = finite_difference(&model.params, 1e-5, |q| {
            let m = ScoringModel { params: q.clone() };
            ranker::pairwise_loss_and_grad(&m, &xs, &batch).unwrap().0
        });
        let err = relative_error(&grad.to_flat(), &fd);
        assert!(err <= 1e-4, "instance {inst}: relative error {err}");
    }
}

#[test]
fn pair_sampling_is_uniform_over_off_diagonal_pairs() {
    let n = 5;
    let draws = 200_000;
    let pairs = ranker::sample_pair_count(n, draws, &mut rng::stream(38, rng::PAIRS)).unwrap();
    let mut counts = vec![0usize; n * n];
    for &(i, j) in &pairs {
        assert_ne!(i, j);
        counts[i * n + j] += 1;
    }
    let p = 1.0 / (n * n - n) as f64;
    let expected = draws as f64 * p;
    let se = (draws as f64 * p * (1.0 - p)).sqrt();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let c = counts[i * n + j] as f64;
                assert!(
                    (c - expected).abs() <= 5.0 * se,
                    "pair ({i},{j}): {c} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn dr_scores_are_unbiased_with_true_nuisances() {
    let (data, truth) = dgp::generate(&DgpConfig::new(50_000, 39)).unwrap();
    let eta: Vec<Nuisances> = (0..truth.len())
        .map(|i| Nuisances {
            mu0: truth.mu0[i],
            mu1: truth.mu1[i],
            e: truth.e[i],
        })
        .collect();
    let phi = DrScores::compute(&data, &eta).unwrap().phi;
    let diff: Vec<f64> = phi.iter().zip(&truth.tau).map(|(p, t)| p - t).collect();
    let n = diff.len() as f64;
    let mean = diff.iter().sum::<f64>() / n;
    let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(
        mean.abs() <= 3.0 * sd / n.sqrt(),
        "mean {mean}, se {}",
        sd / n.sqrt()
    );
}

#[test]
fn approximate_autoc_concentrates_around_the_exact_value() {
    let spread = |m: usize| -> f64 {
        let diffs: Vec<f64> = (0..20)
            .map(|rep| {
                let (data, truth) = dgp::generate(&DgpConfig::new(m, 400 + rep)).unwrap();
                let eta: Vec<Nuisances> = (0..m)
                    .map(|i| Nuisances {
                        mu0: truth.mu0[i],
                        mu1: truth.mu1[i],
                        e: truth.e[i],
                    })
                    .collect();
                let dr = DrScores::compute(&data, &eta).unwrap();
                let scores: Vec<f64> = data
                    .iter()
                    .map(|o| dgp::latent_score(&o.x).unwrap())
                    .collect();
                eval::approx_autoc(&scores, &dr).unwrap()
                    - eval::autoc(&scores, &truth.tau).unwrap()
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64
    };
    let (v1, v10) = (spread(1_000), spread(10_000));
    assert!(v10 < v1, "variance {v10} at 10k vs {v1} at 1k");
}

#[test]
fn noise_free_dr_scores_equal_the_effect() {
    let (data, truth) = dgp::generate(&DgpConfig::new(200, 40).with_noise_sd(0.0)).unwrap();
    for (i, o) in data.iter().enumerate() {
        let phi = causal_rank::nuisance::dr_score(o.t, o.y, truth.mu0[i], truth.mu1[i], truth.e[i])
            .unwrap();
        assert!((phi - truth.tau[i]).abs() < 1e-12);
    }
}
