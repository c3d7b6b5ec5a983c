//! Numerically stable scalar helpers.

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy `-t ln p - (1 - t) ln(1 - p)` with `p = sigmoid(z)`,
/// evaluated from the logit. Valid for soft targets `t` in `[0, 1]`.
pub fn bce_with_logit(z: f64, t: f64) -> f64 {
    softplus(z) - t * z
}

/// Binary cross-entropy from a probability. Returns `+inf` when the target
/// puts mass on an outcome with zero probability.
pub fn bce(p: f64, t: f64) -> f64 {
    let mut loss = 0.0;
    if t > 0.0 {
        loss -= t * p.ln();
    }
    if t < 1.0 {
        loss -= (1.0 - t) * (1.0 - p).ln();
    }
    loss
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}
