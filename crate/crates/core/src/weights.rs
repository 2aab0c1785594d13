//! Log-domain weight arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::WeightError;
use crate::scalar::Real;

/// Normalised weights together with the log of the mean raw weight.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedWeights<F> {
    pub probs: Vec<F>,
    /// log((1/N) Σ exp(w_i)).
    pub log_mean: F,
}

/// Max-shifted log-sum-exp. Returns −∞ for an empty slice or all −∞.
pub fn log_sum_exp<F: Real>(values: &[F]) -> F {
    let max = values.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    if max == F::infinity() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).fold(F::zero(), |a, b| a + b).ln()
}

/// Normalise a vector of log-weights.
///
/// `−∞` entries are zero weights. Fails with [`WeightError::AllWeightsZero`]
/// when nothing is left, which the filters treat as a collapse.
pub fn normalize_log_weights<F: Real>(log_weights: &[F]) -> Result<NormalizedWeights<F>, WeightError> {
    if log_weights.is_empty() {
        return Err(WeightError::Empty);
    }
    if log_weights.iter().any(|w| w.is_nan() || *w == F::infinity()) {
        return Err(WeightError::InvalidWeight);
    }
    let max = log_weights.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return Err(WeightError::AllWeightsZero);
    }
    let mut probs: Vec<F> = log_weights.iter().map(|&w| (w - max).exp()).collect();
    let total = probs.iter().fold(F::zero(), |a, &b| a + b);
    for p in &mut probs {
        *p = *p / total;
    }
    let n = F::from_usize(log_weights.len()).expect("particle count fits scalar");
    Ok(NormalizedWeights { probs, log_mean: max + total.ln() - n.ln() })
}

/// Running log of the product of per-step mean weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihoodEstimate {
    pub log_value: f64,
    pub term_count: usize,
}

impl Default for LogLikelihoodEstimate {
    fn default() -> Self {
        Self { log_value: 0.0, term_count: 0 }
    }
}

impl LogLikelihoodEstimate {
    pub fn add_term(&mut self, log_mean_weight: f64) {
        self.log_value += log_mean_weight;
        self.term_count += 1;
    }

    pub fn mark_collapsed(&mut self) {
        self.log_value = f64::NEG_INFINITY;
        self.term_count += 1;
    }

    pub fn is_collapsed(&self) -> bool {
        self.log_value == f64::NEG_INFINITY
    }
}
