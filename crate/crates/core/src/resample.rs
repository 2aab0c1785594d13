//! Ancestor selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResamplingScheme {
    Multinomial,
    #[default]
    Systematic,
}

impl ResamplingScheme {
    pub fn resample<F: Real, R: Rng + ?Sized>(self, probs: &[F], n: usize, rng: &mut R) -> Result<Vec<usize>> {
        match self {
            Self::Multinomial => resample_multinomial(probs, n, rng),
            Self::Systematic => resample_systematic(probs, n, rng),
        }
    }
}

fn check_simplex<F: Real>(probs: &[F]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidSimplex("empty".into()));
    }
    let mut sum = 0.0f64;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidSimplex(format!("entry {i} is {p}")));
        }
        sum += p;
    }
    let tol = 1e-9f64.max(8.0 * F::epsilon().as_f64() * (probs.len() as f64).sqrt());
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidSimplex(format!("sums to {sum}")));
    }
    Ok(())
}

fn cumulative<F: Real>(probs: &[F]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p.as_f64();
            acc
        })
        .collect()
}

/// Index of the first cumulative entry exceeding `u`, never landing on a
/// zero-probability index.
fn locate<F: Real>(cum: &[f64], probs: &[F], u: f64) -> usize {
    let mut i = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
    while probs[i] == F::zero() && i > 0 {
        i -= 1;
    }
    i
}

/// `n` independent categorical draws.
pub fn resample_multinomial<F: Real, R: Rng + ?Sized>(probs: &[F], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_simplex(probs)?;
    let cum = cumulative(probs);
    let total = *cum.last().unwrap();
    Ok((0..n).map(|_| locate(&cum, probs, rng.random::<f64>() * total)).collect())
}

/// Single-uniform stratified grid; index `i` receives ⌊n pᵢ⌋ or ⌈n pᵢ⌉ copies.
pub fn resample_systematic<F: Real, R: Rng + ?Sized>(probs: &[F], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_simplex(probs)?;
    let cum = cumulative(probs);
    let total = *cum.last().unwrap();
    let u0: f64 = rng.random::<f64>();
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    for k in 0..n {
        let u = (k as f64 + u0) * step;
        while i + 1 < cum.len() && cum[i] <= u {
            i += 1;
        }
        let mut j = i;
        while probs[j] == F::zero() && j > 0 {
            j -= 1;
        }
        out.push(j);
    }
    Ok(out)
}

/// 1 / Σ pᵢ².
pub fn effective_sample_size<F: Real>(probs: &[F]) -> Result<F> {
    check_simplex(probs)?;
    let s = probs.iter().fold(F::zero(), |a, &p| a + p * p);
    Ok(F::one() / s)
}
