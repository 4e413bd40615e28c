//! Agreement metrics: CCC, ICC and MSE.
//!
//! CCC uses population (1/N) moments, so `2·cov` equals `2·σ_y·σ_ŷ·ρ`
//! exactly. ICC follows the `(W − S)/(W + S)` form with `W` averaged over
//! frames and `S` summed, as used for AU intensity ranking.

use crate::error::{Error, Result};

fn check_lengths(y: &[f64], y_hat: &[f64], min: usize, what: &str) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Dimension {
            op: "metric",
            lhs: vec![y.len()],
            rhs: vec![y_hat.len()],
        });
    }
    if y.len() < min {
        return Err(Error::contract(format!("{what} needs at least {min} values")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// CCC value plus whether both inputs were constant (value then reported as 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Concordance {
    pub value: f64,
    pub degenerate: bool,
}

pub fn concordance(y: &[f64], y_hat: &[f64]) -> Result<Concordance> {
    check_lengths(y, y_hat, 2, "ccc")?;
    let (my, mh) = (mean(y), mean(y_hat));
    let n = y.len() as f64;
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vh = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        cov += (a - my) * (b - mh);
        vy += (a - my) * (a - my);
        vh += (b - mh) * (b - mh);
    }
    cov /= n;
    vy /= n;
    vh /= n;
    if vy == 0.0 && vh == 0.0 {
        return Ok(Concordance {
            value: 0.0,
            degenerate: true,
        });
    }
    let denom = vy + vh + (my - mh) * (my - mh);
    Ok(Concordance {
        value: 2.0 * cov / denom,
        degenerate: false,
    })
}

/// Concordance correlation coefficient.
pub fn ccc(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    concordance(y, y_hat).map(|c| c.value)
}

/// Pearson correlation with population moments; 0 when either input is constant.
pub fn pearson(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat, 2, "pearson")?;
    let (my, mh) = (mean(y), mean(y_hat));
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vh = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        cov += (a - my) * (b - mh);
        vy += (a - my) * (a - my);
        vh += (b - mh) * (b - mh);
    }
    if vy == 0.0 || vh == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vy.sqrt() * vh.sqrt()))
}

/// Intra-class correlation `(W − S)/(W + S)`; 1 when both terms vanish.
pub fn icc(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat, 1, "icc")?;
    let n = y.len() as f64;
    let pooled = (y.iter().sum::<f64>() + y_hat.iter().sum::<f64>()) / (2.0 * n);
    let w = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - pooled).powi(2) + (b - pooled).powi(2))
        .sum::<f64>()
        / n;
    let s: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    if w + s == 0.0 {
        return Ok(1.0);
    }
    Ok((w - s) / (w + s))
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat, 1, "mse")?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}
