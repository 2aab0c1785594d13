//! Conjugate pseudo-observation schemes.
//!
//! Each scheme attaches an artificial observation `z` to one scalar target
//! (a parameter or the initial state) with a likelihood conjugate to the
//! target's prior. Three operations make an augmented particle MCMC run
//! possible: simulate `z | target`, draw `target | z`, and evaluate `p(z)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_normal_pdf, truncated_normal, Real};

/// `z | target ~ N(target, noise_var)` with a `N(prior_mean, prior_var)` prior
/// on the target, optionally truncated to an interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPseudoObs<F> {
    pub prior_mean: F,
    pub prior_var: F,
    pub noise_var: F,
    /// Prior support; the untruncated conjugate algebra is used and draws are
    /// restricted to the interval.
    pub bounds: Option<(F, F)>,
}

impl<F: Real> GaussianPseudoObs<F> {
    pub fn new(prior_mean: F, prior_var: F, noise_var: F) -> Result<Self> {
        if !(prior_var > F::zero()) || !(noise_var > F::zero()) {
            return Err(Error::Domain(format!(
                "gaussian scheme needs positive variances, got prior {prior_var:?} noise {noise_var:?}"
            )));
        }
        Ok(Self { prior_mean, prior_var, noise_var, bounds: None })
    }

    pub fn truncated(mut self, lo: F, hi: F) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    /// Noise variance making Var(target | z) equal `target_var`.
    pub fn with_conditional_variance(prior_mean: F, prior_var: F, target_var: F) -> Result<Self> {
        if !(target_var > F::zero()) || target_var >= prior_var {
            return Err(Error::Domain(format!(
                "conditional variance {target_var:?} must lie in (0, prior variance {prior_var:?})"
            )));
        }
        Self::new(prior_mean, prior_var, target_var * prior_var / (prior_var - target_var))
    }

    pub fn simulate<R: Rng + ?Sized>(&self, target: F, rng: &mut R) -> F {
        target + self.noise_var.sqrt() * F::standard_normal(rng)
    }

    /// Untruncated posterior (mean, var) of the target given `z`.
    pub fn conditional(&self, z: F) -> (F, F) {
        let total = self.noise_var + self.prior_var;
        let mean = self.prior_mean + (z - self.prior_mean) * self.prior_var / total;
        (mean, self.noise_var * self.prior_var / total)
    }

    pub fn sample_conditional<R: Rng + ?Sized>(&self, z: F, rng: &mut R) -> F {
        let (m, v) = self.conditional(z);
        match self.bounds {
            None => m + v.sqrt() * F::standard_normal(rng),
            Some((lo, hi)) => truncated_normal(m, v, lo, hi, rng),
        }
    }

    /// log p(z), including the truncation constants when bounded.
    pub fn log_marginal(&self, z: F) -> F {
        let base = log_normal_pdf(z, self.prior_mean, self.noise_var + self.prior_var);
        match self.bounds {
            None => base,
            Some((lo, hi)) => {
                let (m, v) = self.conditional(z);
                base + interval_log_mass(m, v, lo, hi) - interval_log_mass(self.prior_mean, self.prior_var, lo, hi)
            }
        }
    }

    /// log p(z | target)
    pub fn log_likelihood(&self, z: F, target: F) -> F {
        log_normal_pdf(z, target, self.noise_var)
    }

    /// log p(target) under the (possibly truncated) prior.
    pub fn log_prior(&self, target: F) -> F {
        match self.bounds {
            None => log_normal_pdf(target, self.prior_mean, self.prior_var),
            Some((lo, hi)) if target > lo && target < hi => {
                log_normal_pdf(target, self.prior_mean, self.prior_var)
                    - interval_log_mass(self.prior_mean, self.prior_var, lo, hi)
            }
            Some(_) => F::neg_infinity(),
        }
    }
}

/// log P(lo < X < hi) for X ~ N(mean, var).
pub fn interval_log_mass<F: Real>(mean: F, var: F, lo: F, hi: F) -> F {
    let sd = var.sqrt();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    // Evaluate on the side of the distribution where the CDF difference keeps
    // precision.
    if a > F::zero() {
        ((-a).normal_cdf() - (-b).normal_cdf()).ln()
    } else {
        (b.normal_cdf() - a.normal_cdf()).ln()
    }
}

/// `z | precision ~ Gamma(obs_shape, rate = precision)` with a
/// `Gamma(prior_shape, rate = prior_rate)` prior on the precision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPseudoObs<F> {
    pub prior_shape: F,
    pub prior_rate: F,
    pub obs_shape: F,
}

impl<F: Real> GammaPseudoObs<F> {
    pub fn new(prior_shape: F, prior_rate: F, obs_shape: F) -> Result<Self> {
        if !(prior_shape > F::zero() && prior_rate > F::zero() && obs_shape > F::zero()) {
            return Err(Error::Domain(format!(
                "gamma scheme needs positive (a, b, n), got ({prior_shape:?}, {prior_rate:?}, {obs_shape:?})"
            )));
        }
        Ok(Self { prior_shape, prior_rate, obs_shape })
    }

    /// Observation shape making Var(precision | z) ≈ `target_var` when `z`
    /// sits at its conditional mean `n / precision_mean`.
    ///
    /// Solves (a + n) = v (b + n/m)² for n; falls back to a tiny shape when
    /// the target variance is wider than the prior allows.
    pub fn with_conditional_variance(prior_shape: F, prior_rate: F, precision_mean: F, target_var: F) -> Result<Self> {
        if !(precision_mean > F::zero() && target_var > F::zero()) {
            return Err(Error::Domain("precision mean and target variance must be positive".into()));
        }
        let (a, b, m, v) = (prior_shape, prior_rate, precision_mean, target_var);
        let two = F::lit(2.0);
        let qa = v / (m * m);
        let qb = two * v * b / m - F::one();
        let qc = v * b * b - a;
        let disc = qb * qb - F::lit(4.0) * qa * qc;
        let floor = F::lit(1e-3);
        let n = if disc < F::zero() {
            floor
        } else {
            ((-qb + disc.sqrt()) / (two * qa)).max(floor)
        };
        Self::new(a, b, n)
    }

    pub fn simulate<R: Rng + ?Sized>(&self, precision: F, rng: &mut R) -> Result<F> {
        if !(precision > F::zero()) {
            return Err(Error::Domain(format!("precision must be positive, got {precision:?}")));
        }
        loop {
            let z = F::standard_gamma(self.obs_shape, rng) / precision;
            if z > F::zero() && z.is_finite() {
                return Ok(z);
            }
        }
    }

    /// Posterior (shape, rate) of the precision given `z`.
    pub fn conditional(&self, z: F) -> Result<(F, F)> {
        check_positive(z)?;
        Ok((self.prior_shape + self.obs_shape, self.prior_rate + z))
    }

    pub fn sample_conditional<R: Rng + ?Sized>(&self, z: F, rng: &mut R) -> Result<F> {
        let (shape, rate) = self.conditional(z)?;
        Ok(F::standard_gamma(shape, rng) / rate)
    }

    /// log of the compound-gamma density of `z`.
    pub fn log_marginal(&self, z: F) -> Result<F> {
        check_positive(z)?;
        let (a, b, n) = (self.prior_shape, self.prior_rate, self.obs_shape);
        Ok((a + n).ln_gamma() + a * b.ln() - a.ln_gamma() - n.ln_gamma() + (n - F::one()) * z.ln()
            - (n + a) * (z + b).ln())
    }

    /// log p(z | precision)
    pub fn log_likelihood(&self, z: F, precision: F) -> F {
        log_gamma_pdf(z, self.obs_shape, precision)
    }

    /// log p(precision)
    pub fn log_prior(&self, precision: F) -> F {
        log_gamma_pdf(precision, self.prior_shape, self.prior_rate)
    }
}

fn check_positive<F: Real>(z: F) -> Result<()> {
    if z > F::zero() {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma pseudo-observation must be positive, got {z:?}")))
    }
}

/// log Gamma(x; shape, rate); −∞ off the support.
pub fn log_gamma_pdf<F: Real>(x: F, shape: F, rate: F) -> F {
    if !(x > F::zero()) {
        return F::neg_infinity();
    }
    shape * rate.ln() - shape.ln_gamma() + (shape - F::one()) * x.ln() - rate * x
}

/// Pseudo-observation noise variance as a multiple `kz` of a posterior
/// variance.
pub fn scale_by_posterior<F: Real>(kz: F, posterior_var: F) -> Result<F> {
    if !(kz > F::zero() && posterior_var > F::zero()) {
        return Err(Error::Domain(format!("kZ and posterior variance must be positive, got {kz:?}, {posterior_var:?}")));
    }
    Ok(kz * posterior_var)
}

/// One scalar pseudo-observation scheme of either family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PseudoScheme<F> {
    Gaussian(GaussianPseudoObs<F>),
    Gamma(GammaPseudoObs<F>),
}

impl<F: Real> PseudoScheme<F> {
    pub fn simulate<R: Rng + ?Sized>(&self, target: F, rng: &mut R) -> Result<F> {
        match self {
            Self::Gaussian(g) => Ok(g.simulate(target, rng)),
            Self::Gamma(g) => g.simulate(target, rng),
        }
    }

    pub fn sample_conditional<R: Rng + ?Sized>(&self, z: F, rng: &mut R) -> Result<F> {
        match self {
            Self::Gaussian(g) => Ok(g.sample_conditional(z, rng)),
            Self::Gamma(g) => g.sample_conditional(z, rng),
        }
    }

    /// log p(z); −∞ outside the support of `z`.
    pub fn log_marginal(&self, z: F) -> F {
        match self {
            Self::Gaussian(g) => g.log_marginal(z),
            Self::Gamma(g) => g.log_marginal(z).unwrap_or(F::neg_infinity()),
        }
    }

    pub fn log_likelihood(&self, z: F, target: F) -> F {
        match self {
            Self::Gaussian(g) => g.log_likelihood(z, target),
            Self::Gamma(g) => g.log_likelihood(z, target),
        }
    }

    /// Whether `z` must stay positive.
    pub fn positive(&self) -> bool {
        matches!(self, Self::Gamma(_))
    }
}
