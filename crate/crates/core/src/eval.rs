//! Ranking metrics: targeting operator curve, its area (AUTOC), mean policy
//! value, and rank correlation.
//!
//! All metrics depend on scores only through the ordering they induce. Units
//! are sorted by descending score with ties broken by ascending index, so
//! every metric is deterministic even for constant scorers.

use serde::{Deserialize, Serialize};

use crate::dgp::GroundTruth;
use crate::error::{Error, Result};
use crate::nuisance::DrScores;
use crate::ranker::Scorer;

/// `TOC(k/m)` for `k = 1..=m`: mean effect of the top-`k` units minus the
/// mean effect of all units.
#[derive(Debug, Clone, PartialEq)]
pub struct TocCurve {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub autoc: f64,
    pub mean_policy_value: f64,
    pub spearman_vs_truth: f64,
}

fn check_pair(scores: &[f64], other: &[f64], min_len: usize) -> Result<()> {
    if scores.len() != other.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} scores vs {} values",
            scores.len(),
            other.len()
        )));
    }
    if scores.len() < min_len {
        return Err(Error::invalid(format!("need at least {min_len} units")));
    }
    if scores.iter().chain(other).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score or effect".into()));
    }
    Ok(())
}

/// Unit indices from highest to lowest score; equal scores keep index order.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn toc(scores: &[f64], effects: &[f64]) -> Result<TocCurve> {
    check_pair(scores, effects, 1)?;
    let m = scores.len();
    let mut cum = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &i in &ranking_order(scores) {
        acc += effects[i];
        cum.push(acc);
    }
    // Overall mean from the same summation order, so TOC(1) is exactly 0.
    let overall = acc / m as f64;
    let values = cum
        .iter()
        .enumerate()
        .map(|(k, c)| c / (k + 1) as f64 - overall)
        .collect();
    Ok(TocCurve { values })
}

/// Uniform average of the TOC over `k = 1..=m`.
pub fn autoc(scores: &[f64], effects: &[f64]) -> Result<f64> {
    let curve = toc(scores, effects)?;
    Ok(curve.values.iter().sum::<f64>() / curve.values.len() as f64)
}

/// AUTOC with doubly robust scores standing in for the unobserved effects.
pub fn approx_autoc(scores: &[f64], dr: &DrScores) -> Result<f64> {
    autoc(scores, &dr.phi)
}

/// Mean outcome of the policies that treat the top `k` units, averaged over
/// `k = 0..=m`: `V_k = mean(mu0) + (1/m) * sum_{top k} tau`.
pub fn mean_policy_value(scores: &[f64], tau: &[f64], mu0: &[f64]) -> Result<f64> {
    check_pair(scores, tau, 1)?;
    check_pair(scores, mu0, 1)?;
    let m = scores.len() as f64;
    let base = mu0.iter().sum::<f64>() / m;
    let mut acc = 0.0;
    let mut total = base; // k = 0
    for &i in &ranking_order(scores) {
        acc += tau[i];
        total += base + acc / m;
    }
    Ok(total / (m + 1.0))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks on ties. A constant input
/// has no ordering information and yields 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Test-set report against ground truth.
pub fn evaluate(scores: &[f64], truth: &GroundTruth) -> Result<EvalReport> {
    Ok(EvalReport {
        autoc: autoc(scores, &truth.tau)?,
        mean_policy_value: mean_policy_value(scores, &truth.tau, &truth.mu0)?,
        spearman_vs_truth: spearman(scores, &truth.tau)?,
    })
}

#[derive(Debug, Clone)]
pub struct Selected<C, S> {
    pub config: C,
    pub scorer: S,
    pub index: usize,
    /// Validation approximate AUTOC of every candidate, in input order.
    pub criteria: Vec<f64>,
}

/// Picks the candidate with the highest approximate AUTOC on the validation
/// units; the earliest candidate wins ties.
pub fn select_best<C, S: Scorer>(
    candidates: Vec<(C, S)>,
    val_x: &[&[f64]],
    val_dr: &DrScores,
) -> Result<Selected<C, S>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    let criteria = candidates
        .iter()
        .map(|(_, s)| approx_autoc(&s.score_all(val_x), val_dr))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &c) in criteria.iter().enumerate() {
        if c > criteria[best] {
            best = i;
        }
    }
    let (config, scorer) = candidates.into_iter().nth(best).expect("index in range");
    Ok(Selected {
        config,
        scorer,
        index: best,
        criteria,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toc_two_point_examples() {
        assert_eq!(
            toc(&[2.0, 1.0], &[1.0, 0.0]).unwrap().values,
            vec![0.5, 0.0]
        );
        assert_eq!(
            toc(&[1.0, 2.0], &[1.0, 0.0]).unwrap().values,
            vec![-0.5, 0.0]
        );
        assert_eq!(autoc(&[2.0, 1.0], &[1.0, 0.0]).unwrap(), 0.25);
        assert_eq!(autoc(&[1.0, 2.0], &[1.0, 0.0]).unwrap(), -0.25);
    }

    #[test]
    fn toc_of_constant_effects_is_zero() {
        let c = toc(&[0.3, -1.0, 2.0, 0.0], &[1.5; 4]).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn toc_rejects_mismatch() {
        assert!(toc(&[1.0], &[1.0, 2.0]).is_err());
        assert!(toc(&[], &[]).is_err());
        assert!(toc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(ranking_order(&[1.0, 3.0, 1.0, 3.0]), vec![1, 3, 0, 2]);
        // constant scores rank in index order
        let effects = [0.0, 1.0, 2.0];
        let a = autoc(&[5.0; 3], &effects).unwrap();
        let b = autoc(&[3.0, 2.0, 1.0], &effects).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn policy_value_examples() {
        let v = mean_policy_value(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        let mu0 = [0.5, -1.0, 2.0];
        let v = mean_policy_value(&[3.0, 1.0, 2.0], &[0.0; 3], &mu0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(mean_policy_value(&[1.0], &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 30.0]),
            vec![1.5, 3.0, 1.5, 4.0]
        );
    }
}
