//! Exact population losses on finite-support distributions, used to check
//! Neyman-orthogonality of the pairwise loss and the form of its minimizers.
//!
//! A [`DiscretePopulation`] fixes `P(X = x_k)`, the true response surfaces
//! and the true propensity at each support point. Given candidate nuisance
//! tables `eta_hat`, every loss is an exact finite sum:
//!
//! * the cross-entropy `l(p, t)` is affine in `t`, and the pseudo label is
//!   affine in `Y`, so the expectation over `Y | X, T` and over `T | X` can be
//!   taken inside the label. The orthogonal label's conditional mean is
//!   `t + omega * (m_a - m_b)` with
//!   `m_a = e_a / e_hat_a (mu1_a - mu1_hat_a) - (1 - e_a) / (1 - e_hat_a) (mu0_a - mu0_hat_a)`;
//! * pairwise losses sum over ordered pairs of *distinct* support points,
//!   weighted by `p_a p_b`. A pair of a point with itself has margin 0 and
//!   contributes the constant `ln 2` for every kind and every `g`, so it is
//!   left out.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{bce_with_logit, sigmoid};
use crate::rng;

/// Propensity range that perturbed tables must stay within.
pub const PROPENSITY_BOUNDS: (f64, f64) = (0.05, 0.95);
pub const DEFAULT_STEP: f64 = 1e-3;
pub const ORTH_MAX_ABS: f64 = 1e-4;
pub const SOFT_MEDIAN_MIN: f64 = 1e-2;
pub const CONTRAST_MIN: f64 = 100.0;
pub const STATIONARITY_TOL: f64 = 1e-10;
pub const SLOPE_REL_TOL: f64 = 0.02;
pub const R2_MIN: f64 = 0.999;
pub const FLATNESS_KAPPAS: [f64; 3] = [0.25, 1.0, 3.0];

const FIXTURE_MAGIC: &str = "causal-rank-population v1";
const FIXTURE_HEADER: &str = "prob,mu0,mu1,e";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Cate,
    Bin,
    Soft,
    Orth,
}

/// Nuisance values at each support point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaTables {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub e: Vec<f64>,
}

impl EtaTables {
    pub fn tau(&self) -> Vec<f64> {
        self.mu1.iter().zip(&self.mu0).map(|(a, b)| a - b).collect()
    }

    fn shifted(&self, dir: &Direction, s: f64) -> EtaTables {
        let add = |v: &[f64], d: &[f64]| v.iter().zip(d).map(|(a, b)| a + s * b).collect();
        EtaTables {
            mu0: add(&self.mu0, &dir.d_mu0),
            mu1: add(&self.mu1, &dir.d_mu1),
            e: add(&self.e, &dir.d_e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePopulation {
    pub prob: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub e: Vec<f64>,
}

impl DiscretePopulation {
    /// Checks: at least two points, positive probabilities summing to one,
    /// propensities in `(0, 1)`, finite tables and distinct effects.
    pub fn new(prob: Vec<f64>, mu0: Vec<f64>, mu1: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        let k = prob.len();
        if k < 2 {
            return Err(Error::invalid("population needs at least 2 support points"));
        }
        if mu0.len() != k || mu1.len() != k || e.len() != k {
            return Err(Error::invalid("population tables differ in length"));
        }
        if prob
            .iter()
            .chain(&mu0)
            .chain(&mu1)
            .chain(&e)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("population tables must be finite"));
        }
        if prob.iter().any(|&p| p <= 0.0) {
            return Err(Error::invalid("support probabilities must be positive"));
        }
        let total: f64 = prob.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        if let Some(bad) = e.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::invalid(format!("propensity {bad} outside (0,1)")));
        }
        let pop = DiscretePopulation { prob, mu0, mu1, e };
        let tau = pop.tau();
        for a in 0..k {
            for b in a + 1..k {
                if tau[a] == tau[b] {
                    return Err(Error::invalid(format!(
                        "support points {a} and {b} have tied effects"
                    )));
                }
            }
        }
        Ok(pop)
    }

    pub fn k(&self) -> usize {
        self.prob.len()
    }

    pub fn tau(&self) -> Vec<f64> {
        self.mu1.iter().zip(&self.mu0).map(|(a, b)| a - b).collect()
    }

    pub fn true_eta(&self) -> EtaTables {
        EtaTables {
            mu0: self.mu0.clone(),
            mu1: self.mu1.clone(),
            e: self.e.clone(),
        }
    }

    /// Stricter check for the orthogonality sweep: propensities must sit in
    /// [`PROPENSITY_BOUNDS`] so perturbations stay well inside `(0, 1)`.
    pub fn validate_for_check(&self) -> Result<()> {
        let (lo, hi) = PROPENSITY_BOUNDS;
        if let Some(bad) = self.e.iter().find(|&&v| !(lo..=hi).contains(&v)) {
            return Err(Error::invalid(format!(
                "propensity {bad} outside [{lo}, {hi}] required for the orthogonality check"
            )));
        }
        Ok(())
    }

    pub fn to_fixture(&self) -> String {
        let mut s = format!("{FIXTURE_MAGIC}\n{FIXTURE_HEADER}\n");
        for k in 0..self.k() {
            let _ = writeln!(
                s,
                "{:?},{:?},{:?},{:?}",
                self.prob[k], self.mu0[k], self.mu1[k], self.e[k]
            );
        }
        s
    }

    /// Parses the versioned fixture format. Blank lines and `#` comments are
    /// ignored.
    pub fn from_fixture(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i as u64 + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match rows.next() {
            Some((_, FIXTURE_MAGIC)) => {}
            Some((ln, _)) => {
                return Err(Error::parse(ln, 1, format!("expected `{FIXTURE_MAGIC}`")))
            }
            None => return Err(Error::parse(1, 1, "empty population fixture")),
        }
        match rows.next() {
            Some((_, FIXTURE_HEADER)) => {}
            Some((ln, _)) => {
                return Err(Error::parse(
                    ln,
                    1,
                    format!("expected header `{FIXTURE_HEADER}`"),
                ))
            }
            None => return Err(Error::parse(2, 1, "missing header")),
        }
        let (mut prob, mut mu0, mut mu1, mut e) = (vec![], vec![], vec![], vec![]);
        for (ln, line) in rows {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    ln,
                    1,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let mut vals = [0.0; 4];
            for (c, f) in fields.iter().enumerate() {
                vals[c] = match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => return Err(Error::parse(ln, c + 1, format!("invalid number `{f}`"))),
                };
            }
            prob.push(vals[0]);
            mu0.push(vals[1]);
            mu1.push(vals[2]);
            e.push(vals[3]);
        }
        DiscretePopulation::new(prob, mu0, mu1, e)
    }

    /// Five-point population checked into `fixtures/population5.txt`.
    pub fn canonical5() -> Self {
        DiscretePopulation::from_fixture(CANONICAL5).expect("bundled fixture is valid")
    }

    /// Four-point population checked into `fixtures/population4.txt`.
    pub fn canonical4() -> Self {
        DiscretePopulation::from_fixture(CANONICAL4).expect("bundled fixture is valid")
    }
}

pub const CANONICAL5: &str = include_str!("../fixtures/population5.txt");
pub const CANONICAL4: &str = include_str!("../fixtures/population4.txt");

fn check_tables(g: &[f64], eta: &EtaTables, pop: &DiscretePopulation) -> Result<()> {
    let k = pop.k();
    if g.len() != k || eta.mu0.len() != k || eta.mu1.len() != k || eta.e.len() != k {
        return Err(Error::invalid("tables are not aligned with the support"));
    }
    if let Some(bad) = eta.e.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::invalid(format!("propensity {bad} outside (0,1)")));
    }
    Ok(())
}

/// Pair targets `T_ab` (conditional mean of the label) for pairwise kinds.
fn pair_targets(kind: LossKind, eta: &EtaTables, pop: &DiscretePopulation, kappa: f64) -> Vec<f64> {
    let k = pop.k();
    let tau = eta.tau();
    // Conditional mean of phi_hat - tau_hat at each support point.
    let m: Vec<f64> = (0..k)
        .map(|a| {
            pop.e[a] / eta.e[a] * (pop.mu1[a] - eta.mu1[a])
                - (1.0 - pop.e[a]) / (1.0 - eta.e[a]) * (pop.mu0[a] - eta.mu0[a])
        })
        .collect();
    let mut t = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            t[a * k + b] = match kind {
                LossKind::Bin => {
                    if tau[a] > tau[b] {
                        1.0
                    } else {
                        0.0
                    }
                }
                LossKind::Soft => sigmoid((tau[a] - tau[b]) / kappa),
                LossKind::Orth => {
                    let s = sigmoid((tau[a] - tau[b]) / kappa);
                    s + s * (1.0 - s) / kappa * (m[a] - m[b])
                }
                LossKind::Cate => unreachable!("pointwise loss"),
            };
        }
    }
    t
}

fn check_kappa(kind: LossKind, kappa: f64) -> Result<()> {
    if matches!(kind, LossKind::Soft | LossKind::Orth) && !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    Ok(())
}

/// Exact population loss of scoring table `g` under nuisance tables `eta`.
pub fn population_loss(
    kind: LossKind,
    g: &[f64],
    eta: &EtaTables,
    pop: &DiscretePopulation,
    kappa: f64,
) -> Result<f64> {
    check_tables(g, eta, pop)?;
    check_kappa(kind, kappa)?;
    let k = pop.k();
    if kind == LossKind::Cate {
        let tau = eta.tau();
        return Ok((0..k).map(|a| pop.prob[a] * (g[a] - tau[a]).powi(2)).sum());
    }
    let t = pair_targets(kind, eta, pop, kappa);
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                total += pop.prob[a] * pop.prob[b] * bce_with_logit(g[a] - g[b], t[a * k + b]);
            }
        }
    }
    Ok(total)
}

/// Exact gradient of [`population_loss`] with respect to the `g` table.
pub fn loss_gradient_g(
    kind: LossKind,
    g: &[f64],
    eta: &EtaTables,
    pop: &DiscretePopulation,
    kappa: f64,
) -> Result<Vec<f64>> {
    check_tables(g, eta, pop)?;
    check_kappa(kind, kappa)?;
    let k = pop.k();
    let mut grad = vec![0.0; k];
    if kind == LossKind::Cate {
        let tau = eta.tau();
        for a in 0..k {
            grad[a] = 2.0 * pop.prob[a] * (g[a] - tau[a]);
        }
        return Ok(grad);
    }
    let t = pair_targets(kind, eta, pop, kappa);
    for a in 0..k {
        for b in 0..k {
            if a != b {
                let r = pop.prob[a] * pop.prob[b] * (sigmoid(g[a] - g[b]) - t[a * k + b]);
                grad[a] += r;
                grad[b] -= r;
            }
        }
    }
    Ok(grad)
}

/// Joint perturbation of the scoring table and the nuisance tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub d_g: Vec<f64>,
    pub d_mu0: Vec<f64>,
    pub d_mu1: Vec<f64>,
    pub d_e: Vec<f64>,
}

impl Direction {
    /// Uniform draw on `[-1, 1]` per entry, scaled to unit sup-norm.
    pub fn random(k: usize, rng: &mut rng::StreamRng) -> Self {
        let mut draw = || -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let mut dir = Direction {
            d_g: draw(),
            d_mu0: draw(),
            d_mu1: draw(),
            d_e: draw(),
        };
        dir.normalize();
        dir
    }

    pub fn sup_norm(&self) -> f64 {
        self.parts()
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn parts(&self) -> [&Vec<f64>; 4] {
        [&self.d_g, &self.d_mu0, &self.d_mu1, &self.d_e]
    }

    fn normalize(&mut self) {
        let norm = self.sup_norm();
        if norm > 0.0 {
            for v in [
                &mut self.d_g,
                &mut self.d_mu0,
                &mut self.d_mu1,
                &mut self.d_e,
            ] {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }

    /// Shrinks propensity components so that `e +/- h * d_e` stays within
    /// [`PROPENSITY_BOUNDS`].
    pub fn project_propensity(&mut self, e: &[f64], h: f64) {
        let (lo, hi) = PROPENSITY_BOUNDS;
        for (d, &e0) in self.d_e.iter_mut().zip(e) {
            let room = (e0 - lo).min(hi - e0).max(0.0) / h;
            *d = d.clamp(-room, room);
        }
    }
}

/// Mixed derivative `d^2/ds du` of
/// `f(s, u) = L(kind, g0 + u d_g, eta0 + s d_eta)` at the origin, by the
/// four-point central stencil with step `h`.
pub fn cross_derivative(
    kind: LossKind,
    g0: &[f64],
    eta0: &EtaTables,
    dir: &Direction,
    h: f64,
    pop: &DiscretePopulation,
    kappa: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("step must be positive"));
    }
    for (&e, &d) in eta0.e.iter().zip(&dir.d_e) {
        let (lo, hi) = (e - h * d.abs(), e + h * d.abs());
        if !(lo > 0.0 && hi < 1.0) {
            return Err(Error::StepTooLarge(format!(
                "propensity {e} leaves (0,1) under step {h}"
            )));
        }
    }
    let f = |s: f64, u: f64| -> Result<f64> {
        let g: Vec<f64> = g0.iter().zip(&dir.d_g).map(|(a, b)| a + u * b).collect();
        population_loss(kind, &g, &eta0.shifted(dir, s), pop, kappa)
    };
    let val = (f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (4.0 * h * h);
    Ok(val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub kappa: f64,
    pub step: f64,
    pub seed: u64,
    pub orth: Vec<f64>,
    pub soft: Vec<f64>,
    pub orth_max_abs: f64,
    pub soft_median_abs: f64,
    pub contrast: f64,
    pub pass: bool,
}

fn median_abs(v: &[f64]) -> f64 {
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_by(f64::total_cmp);
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        a[n / 2]
    } else {
        0.5 * (a[n / 2 - 1] + a[n / 2])
    }
}

/// Cross-derivatives of the soft and orthogonal losses at their shared
/// minimizer `g0 = tau / kappa` and the true nuisances, over seeded random
/// directions perturbing `g`, `mu0`, `mu1` and `e` jointly.
pub fn verify_orthogonality(
    pop: &DiscretePopulation,
    kappa: f64,
    n_directions: usize,
    h: f64,
    seed: u64,
) -> Result<OrthogonalityReport> {
    pop.validate_for_check()?;
    if n_directions == 0 {
        return Err(Error::invalid("need at least one direction"));
    }
    let eta0 = pop.true_eta();
    let g0: Vec<f64> = pop.tau().iter().map(|t| t / kappa).collect();
    let mut rng = rng::stream(seed, rng::CHECKS);
    let mut orth = Vec::with_capacity(n_directions);
    let mut soft = Vec::with_capacity(n_directions);
    for _ in 0..n_directions {
        let mut dir = Direction::random(pop.k(), &mut rng);
        dir.project_propensity(&pop.e, h);
        orth.push(cross_derivative(
            LossKind::Orth,
            &g0,
            &eta0,
            &dir,
            h,
            pop,
            kappa,
        )?);
        soft.push(cross_derivative(
            LossKind::Soft,
            &g0,
            &eta0,
            &dir,
            h,
            pop,
            kappa,
        )?);
    }
    let orth_max_abs = orth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let soft_median_abs = median_abs(&soft);
    let contrast = soft_median_abs / median_abs(&orth).max(f64::MIN_POSITIVE);
    let pass = orth_max_abs <= ORTH_MAX_ABS
        && soft_median_abs >= SOFT_MEDIAN_MIN
        && soft_median_abs >= CONTRAST_MIN * median_abs(&orth);
    Ok(OrthogonalityReport {
        kappa,
        step: h,
        seed,
        orth,
        soft,
        orth_max_abs,
        soft_median_abs,
        contrast,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    pub shift: f64,
    pub grad_sup_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessPoint {
    pub kappa: f64,
    /// Probability-weighted mean of `p (1 - p)` over distinct pairs at the optimum.
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerReport {
    pub kappa: f64,
    pub seed: u64,
    pub stationarity: Vec<Stationarity>,
    pub stationarity_pass: bool,
    pub converged: bool,
    pub iterations: usize,
    pub residual_grad: f64,
    pub recovered: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub spearman: f64,
    pub recovery_pass: bool,
    pub flatness: Vec<FlatnessPoint>,
    pub flatness_pass: bool,
    pub pass: bool,
}

pub const MAX_ITERATIONS: usize = 2_000_000;
const GRAD_TOL: f64 = 1e-12;

/// Full-batch gradient descent on the `g` table. The Hessian of any pairwise
/// loss is bounded by `S / 2` with `S = sum_{a != b} p_a p_b`, so the fixed
/// step `2 / S` never overshoots.
pub fn minimize_pairwise(
    kind: LossKind,
    init: &[f64],
    eta: &EtaTables,
    pop: &DiscretePopulation,
    kappa: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let s: f64 = (0..pop.k())
        .flat_map(|a| (0..pop.k()).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| pop.prob[a] * pop.prob[b])
        .sum();
    let step = 2.0 / s;
    let mut g = init.to_vec();
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let grad = loss_gradient_g(kind, &g, eta, pop, kappa)?;
        residual = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if residual <= GRAD_TOL {
            return Ok((g, it, residual));
        }
        for (gi, di) in g.iter_mut().zip(&grad) {
            *gi -= step * di;
        }
    }
    Ok((g, max_iter, residual))
}

/// Least-squares fit `y = a x + b`, returning `(a, b, R^2)`.
pub fn affine_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy == 0.0 {
        0.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (a, b, r2)
}

/// Mean curvature factor `p (1 - p)` of the pairwise loss at the optimum
/// `g = tau / kappa`.
pub fn curvature_at_optimum(pop: &DiscretePopulation, kappa: f64) -> f64 {
    let tau = pop.tau();
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..pop.k() {
        for b in 0..pop.k() {
            if a != b {
                let w = pop.prob[a] * pop.prob[b];
                let p = sigmoid((tau[a] - tau[b]) / kappa);
                num += w * p * (1.0 - p);
                den += w;
            }
        }
    }
    num / den
}

/// Checks that `tau / kappa + c` is stationary for the orthogonal loss at the
/// true nuisances, that gradient descent from a random start recovers it up
/// to a shift, and that the loss flattens around its optimum as `kappa`
/// shrinks.
pub fn verify_minimizer(
    pop: &DiscretePopulation,
    kappa: f64,
    seed: u64,
) -> Result<MinimizerReport> {
    check_kappa(LossKind::Orth, kappa)?;
    let eta = pop.true_eta();
    let tau = pop.tau();

    let stationarity = [-1.0, 0.0, 2.0]
        .iter()
        .map(|&c| {
            let g: Vec<f64> = tau.iter().map(|t| t / kappa + c).collect();
            let grad = loss_gradient_g(LossKind::Orth, &g, &eta, pop, kappa)?;
            Ok(Stationarity {
                shift: c,
                grad_sup_norm: grad.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stationarity_pass = stationarity
        .iter()
        .all(|s| s.grad_sup_norm <= STATIONARITY_TOL);

    let mut rng = rng::stream(seed, rng::CHECKS);
    let init: Vec<f64> = (0..pop.k()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (recovered, iterations, residual_grad) =
        minimize_pairwise(LossKind::Orth, &init, &eta, pop, kappa, MAX_ITERATIONS)?;
    let converged = residual_grad <= GRAD_TOL;
    let (slope, intercept, r_squared) = affine_fit(&tau, &recovered);
    let spearman = crate::eval::spearman(&recovered, &tau)?;
    let target = 1.0 / kappa;
    let recovery_pass =
        (slope - target).abs() <= SLOPE_REL_TOL * target && r_squared >= R2_MIN && spearman == 1.0;

    let flatness: Vec<FlatnessPoint> = FLATNESS_KAPPAS
        .iter()
        .map(|&k| FlatnessPoint {
            kappa: k,
            curvature: curvature_at_optimum(pop, k),
        })
        .collect();
    let flatness_pass = flatness.windows(2).all(|w| w[0].curvature < w[1].curvature);

    Ok(MinimizerReport {
        kappa,
        seed,
        stationarity,
        stationarity_pass,
        converged,
        iterations,
        residual_grad,
        recovered,
        slope,
        intercept,
        r_squared,
        spearman,
        recovery_pass,
        flatness,
        flatness_pass,
        pass: stationarity_pass && recovery_pass && flatness_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> DiscretePopulation {
        DiscretePopulation::new(
            vec![0.5, 0.5],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.5, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn fixtures_parse_and_round_trip() {
        for pop in [
            DiscretePopulation::canonical5(),
            DiscretePopulation::canonical4(),
        ] {
            let again = DiscretePopulation::from_fixture(&pop.to_fixture()).unwrap();
            assert_eq!(again, pop);
            assert!(pop.validate_for_check().is_ok());
        }
        assert_eq!(DiscretePopulation::canonical5().k(), 5);
        assert_eq!(DiscretePopulation::canonical4().k(), 4);
    }

    #[test]
    fn population_validation() {
        assert!(DiscretePopulation::new(vec![1.0], vec![0.0], vec![1.0], vec![0.5]).is_err());
        assert!(DiscretePopulation::new(
            vec![0.6, 0.6],
            vec![0.0; 2],
            vec![0.0, 1.0],
            vec![0.5; 2]
        )
        .is_err());
        assert!(
            DiscretePopulation::new(vec![0.5; 2], vec![0.0; 2], vec![1.0, 1.0], vec![0.5; 2])
                .is_err()
        );
        assert!(DiscretePopulation::new(
            vec![0.5; 2],
            vec![0.0; 2],
            vec![0.0, 1.0],
            vec![1.0, 0.5]
        )
        .is_err());
        let tampered =
            DiscretePopulation::new(vec![0.5; 2], vec![0.0; 2], vec![0.0, 1.0], vec![0.999, 0.5])
                .unwrap();
        assert!(tampered.validate_for_check().is_err());
    }

    #[test]
    fn cate_loss_vanishes_at_tau() {
        let pop = DiscretePopulation::canonical5();
        let eta = pop.true_eta();
        assert_eq!(
            population_loss(LossKind::Cate, &pop.tau(), &eta, &pop, 1.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn soft_loss_two_point_by_hand() {
        let pop = two_point();
        let eta = pop.true_eta();
        let g = [1.0, 0.0];
        let loss = population_loss(LossKind::Soft, &g, &eta, &pop, 1.0).unwrap();
        // pairs (0,1) and (1,0), each weighted 1/4; margin +-1 and target sigmoid(+-1)
        let t = 1.0 / (1.0 + (-1.0f64).exp());
        let l01 = -(t * t.ln() + (1.0 - t) * (1.0 - t).ln());
        assert!((loss - 0.5 * l01).abs() < 1e-12);
    }

    #[test]
    fn shift_direction_has_zero_gradient_sum() {
        let pop = DiscretePopulation::canonical5();
        let eta = EtaTables {
            mu0: pop.mu0.iter().map(|v| v + 0.1).collect(),
            ..pop.true_eta()
        };
        let g = [0.3, -0.2, 1.0, 0.4, -0.9];
        for kind in [LossKind::Bin, LossKind::Soft, LossKind::Orth] {
            let grad = loss_gradient_g(kind, &g, &eta, &pop, 0.7).unwrap();
            assert!(grad.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn cross_derivative_without_nuisance_direction_is_zero() {
        let pop = DiscretePopulation::canonical5();
        let mut dir = Direction::random(5, &mut rng::stream(1, rng::CHECKS));
        dir.d_mu0.fill(0.0);
        dir.d_mu1.fill(0.0);
        dir.d_e.fill(0.0);
        let g0: Vec<f64> = pop.tau();
        for kind in [LossKind::Soft, LossKind::Orth, LossKind::Cate] {
            let v = cross_derivative(kind, &g0, &pop.true_eta(), &dir, 1e-3, &pop, 1.0).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn cross_derivative_rejects_large_steps() {
        let pop = DiscretePopulation::canonical5();
        let mut dir = Direction::random(5, &mut rng::stream(2, rng::CHECKS));
        dir.d_e.fill(1.0);
        let err = cross_derivative(
            LossKind::Orth,
            &pop.tau(),
            &pop.true_eta(),
            &dir,
            0.9,
            &pop,
            1.0,
        );
        assert!(matches!(err, Err(Error::StepTooLarge(_))));
    }

    #[test]
    fn projection_keeps_propensities_in_bounds() {
        let e = [0.06, 0.5, 0.94];
        let mut dir = Direction {
            d_g: vec![0.0; 3],
            d_mu0: vec![0.0; 3],
            d_mu1: vec![0.0; 3],
            d_e: vec![-1.0, 1.0, 1.0],
        };
        dir.project_propensity(&e, 0.1);
        for (e0, d) in e.iter().zip(&dir.d_e) {
            assert!(e0 + 0.1 * d <= 0.95 + 1e-12 && e0 - 0.1 * d >= 0.05 - 1e-12);
        }
        assert_eq!(dir.d_e[1], 1.0);
    }

    #[test]
    fn affine_fit_recovers_line() {
        let (a, b, r2) = affine_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((a - 2.0).abs() < 1e-15 && (b - 1.0).abs() < 1e-15 && (r2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reports_are_deterministic_and_serialize() {
        let pop = DiscretePopulation::canonical5();
        let a = verify_orthogonality(&pop, 1.0, 5, DEFAULT_STEP, 3).unwrap();
        let b = verify_orthogonality(&pop, 1.0, 5, DEFAULT_STEP, 3).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: OrthogonalityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        let m = verify_minimizer(&DiscretePopulation::canonical4(), 1.0, 3).unwrap();
        let back: MinimizerReport =
            serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
