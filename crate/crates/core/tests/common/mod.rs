//! Oracle helpers shared by the integration tests.
#![allow(dead_code)]

use causal_rank::nn::{ModelParams, Task};
use causal_rank::orthocheck::{DiscretePopulation, EtaTables, LossKind};
use causal_rank::rng::StreamRng;
use rand::Rng;

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn bce_logit(z: f64, t: f64) -> f64 {
    // -t ln sigma(z) - (1 - t) ln(1 - sigma(z)), for moderate z
    (1.0 + z.exp()).ln() - t * z
}

pub fn random_population(k: usize, r: &mut StreamRng) -> DiscretePopulation {
    loop {
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let prob = raw.iter().map(|p| p / s).collect();
        let mu0 = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
        let mu1 = (0..k).map(|_| r.random_range(-1.0..1.5)).collect();
        let e = (0..k).map(|_| r.random_range(0.1..0.9)).collect();
        if let Ok(p) = DiscretePopulation::new(prob, mu0, mu1, e) {
            return p;
        }
    }
}

pub fn perturbed_eta(pop: &DiscretePopulation, r: &mut StreamRng) -> EtaTables {
    EtaTables {
        mu0: pop
            .mu0
            .iter()
            .map(|v| v + r.random_range(-0.4..0.4))
            .collect(),
        mu1: pop
            .mu1
            .iter()
            .map(|v| v + r.random_range(-0.4..0.4))
            .collect(),
        e: pop
            .e
            .iter()
            .map(|v| (v + r.random_range(-0.2..0.2)).clamp(0.08, 0.92))
            .collect(),
    }
}

/// Enumerates support pairs, both treatment draws and a symmetric two-point
/// noise for each unit, averaging the per-pair loss of the realized label.
pub fn brute_force_loss(
    kind: LossKind,
    g: &[f64],
    eta: &EtaTables,
    pop: &DiscretePopulation,
    kappa: f64,
    noise: f64,
) -> f64 {
    let k = pop.k();
    let tau_hat: Vec<f64> = (0..k).map(|a| eta.mu1[a] - eta.mu0[a]).collect();
    if kind == LossKind::Cate {
        return (0..k)
            .map(|a| pop.prob[a] * (g[a] - tau_hat[a]) * (g[a] - tau_hat[a]))
            .sum();
    }
    let phi = |a: usize, t: bool, y: f64| -> f64 {
        if t {
            (y - eta.mu1[a]) / eta.e[a] + tau_hat[a]
        } else {
            -(y - eta.mu0[a]) / (1.0 - eta.e[a]) + tau_hat[a]
        }
    };
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            for ta in [false, true] {
                for tb in [false, true] {
                    let pa = if ta { pop.e[a] } else { 1.0 - pop.e[a] };
                    let pb = if tb { pop.e[b] } else { 1.0 - pop.e[b] };
                    for ea in [-noise, noise] {
                        for eb in [-noise, noise] {
                            let ya = if ta { pop.mu1[a] } else { pop.mu0[a] } + ea;
                            let yb = if tb { pop.mu1[b] } else { pop.mu0[b] } + eb;
                            let soft = logistic((tau_hat[a] - tau_hat[b]) / kappa);
                            let label = match kind {
                                LossKind::Bin => f64::from(u8::from(tau_hat[a] > tau_hat[b])),
                                LossKind::Soft => soft,
                                LossKind::Orth => {
                                    let w = soft * (1.0 - soft) / kappa;
                                    let delta = (phi(a, ta, ya) - tau_hat[a])
                                        - (phi(b, tb, yb) - tau_hat[b]);
                                    soft + w * delta
                                }
                                LossKind::Cate => unreachable!(),
                            };
                            let weight = pop.prob[a] * pop.prob[b] * pa * pb * 0.25;
                            total += weight * bce_logit(g[a] - g[b], label);
                        }
                    }
                }
            }
        }
    }
    total
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

pub fn random_params(d: usize, hidden: usize, task: Task, r: &mut StreamRng) -> ModelParams {
    let mut p = ModelParams::init(d, hidden, task, r.random()).unwrap();
    let flat: Vec<f64> = (0..p.n_params())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    p.set_flat(&flat);
    p
}

pub fn finite_difference(
    params: &ModelParams,
    h: f64,
    f: impl Fn(&ModelParams) -> f64,
) -> Vec<f64> {
    let base = params.to_flat();
    let mut p = params.clone();
    (0..base.len())
        .map(|i| {
            let mut v = base.clone();
            v[i] = base[i] + h;
            p.set_flat(&v);
            let up = f(&p);
            v[i] = base[i] - h;
            p.set_flat(&v);
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
        .collect()
}
