//! Chain post-processing: autocorrelation, integrated autocorrelation time,
//! effective sample size, batch-means standard errors, and particle-count
//! tuning against a target log-likelihood variance.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::smc::{ConditionalTarget, Conditioner, FilterOptions};

/// Name of the ACT estimator, echoed into every summary record.
pub const ACT_ESTIMATOR: &str = "initial-positive-sequence";

/// A chain trace with its burn-in and thinning.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSeries<F> {
    pub values: Vec<F>,
    pub burn_in: usize,
    pub thin: usize,
}

impl<F: Real> ChainSeries<F> {
    pub fn new(values: Vec<F>, burn_in: usize, thin: usize) -> Result<Self> {
        if thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if burn_in + 1 > values.len() {
            return Err(Error::Config(format!("burn-in {burn_in} leaves nothing of a length-{} chain", values.len())));
        }
        Ok(Self { values, burn_in, thin })
    }

    /// Drop the first quarter as burn-in, no thinning.
    pub fn with_default_burn_in(values: Vec<F>) -> Result<Self> {
        let b = values.len() / 4;
        Self::new(values, b, 1)
    }

    pub fn retained(&self) -> Vec<F> {
        self.values[self.burn_in..].iter().step_by(self.thin).copied().collect()
    }
}

fn mean<F: Real>(x: &[F]) -> F {
    x.iter().fold(F::zero(), |a, &b| a + b) / F::from_usize(x.len()).unwrap()
}

/// Full sample autocorrelation function of `x` (lags 0..n) by FFT.
fn autocorrelation<F: Real>(x: &[F]) -> Result<Vec<F>> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<F>> = x.iter().map(|&v| Complex::new(v - m, F::zero())).collect();
    buf.resize(size, Complex::new(F::zero(), F::zero()));
    let mut planner = FftPlanner::<F>::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), F::zero());
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    let var = x.iter().fold(F::zero(), |a, &v| a + (v - m) * (v - m)) / F::from_usize(n).unwrap();
    if var == F::zero() || var.sqrt() <= F::lit(1e-14) * m.abs() || c0 <= F::zero() {
        return Err(Error::DegenerateSeries);
    }
    Ok(buf[..n].iter().map(|c| c.re / c0).collect())
}

/// Sample autocorrelation at lags `0..=max_lag` of the retained series;
/// normalised by the lag-0 autocovariance.
pub fn acf<F: Real>(series: &ChainSeries<F>, max_lag: usize) -> Result<Vec<F>> {
    let x = series.retained();
    if x.len() <= max_lag {
        return Err(Error::Config(format!("series of length {} too short for lag {max_lag}", x.len())));
    }
    let mut r = autocorrelation(&x)?;
    r.truncate(max_lag + 1);
    r[0] = F::one();
    Ok(r)
}

/// Integrated autocorrelation time 1 + 2 Σ ρ_k, truncated by the initial
/// positive sequence rule on consecutive lag pairs.
pub fn autocorrelation_time<F: Real>(series: &ChainSeries<F>) -> Result<F> {
    let x = series.retained();
    let rho = autocorrelation(&x)?;
    let two = F::lit(2.0);
    let mut total = F::zero();
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let pair = if k == 0 { F::one() + rho[1] } else { rho[2 * k] + rho[2 * k + 1] };
        if pair <= F::zero() {
            break;
        }
        total = total + pair;
        k += 1;
    }
    let act = two * total - F::one();
    if act < F::lit(0.5) {
        log::warn!("autocorrelation time {act:?} below 0.5; chain may be antithetic or too short");
    }
    Ok(act)
}

/// Retained length divided by the autocorrelation time.
pub fn effective_sample_size<F: Real>(series: &ChainSeries<F>) -> Result<F> {
    let act = autocorrelation_time(series)?;
    Ok(F::from_usize(series.retained().len()).unwrap() / act)
}

/// Batch-means standard error of the retained mean, ⌊√n⌋ batches.
pub fn batch_means_se<F: Real>(series: &ChainSeries<F>) -> Result<F> {
    let x = series.retained();
    let batches = (x.len() as f64).sqrt().floor() as usize;
    if batches < 2 {
        return Err(Error::Config("too few samples for batch means".into()));
    }
    let size = x.len() / batches;
    let means: Vec<F> = (0..batches).map(|b| mean(&x[b * size..(b + 1) * size])).collect();
    let grand = mean(&means);
    let var = means.iter().fold(F::zero(), |a, &m| a + (m - grand) * (m - grand)) / F::from_usize(batches - 1).unwrap();
    Ok((var / F::from_usize(batches).unwrap()).sqrt())
}

/// One component's JSON summary record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ComponentSummary {
    pub component: String,
    pub act: Option<f64>,
    pub ess: Option<f64>,
    pub mean: f64,
    pub variance: f64,
    #[serde(rename = "batchMeansSE")]
    pub batch_means_se: Option<f64>,
    pub acf_head: Vec<f64>,
    pub act_estimator: String,
}

/// Summaries a constant series to `act = None` rather than failing.
pub fn summarize(component: &str, series: &ChainSeries<f64>) -> ComponentSummary {
    let x = series.retained();
    let m = mean(&x);
    let variance = if x.len() > 1 {
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
    } else {
        0.0
    };
    let act = autocorrelation_time(series).ok();
    let ess = act.map(|a| x.len() as f64 / a);
    let head = acf(series, 10.min(x.len().saturating_sub(1))).unwrap_or_default();
    ComponentSummary {
        component: component.to_string(),
        act,
        ess,
        mean: m,
        variance,
        batch_means_se: batch_means_se(series).ok(),
        acf_head: head,
        act_estimator: ACT_ESTIMATOR.to_string(),
    }
}

/// Settings for [`tune_particle_count`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub min_particles: usize,
    pub max_particles: usize,
    /// Ratio between consecutive grid points.
    pub factor: f64,
    pub repetitions: usize,
    pub filter: FilterOptions,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self { min_particles: 1, max_particles: 16_384, factor: 2.0, repetitions: 50, filter: FilterOptions::default() }
    }
}

impl TuneOptions {
    pub fn grid(&self) -> Vec<usize> {
        let mut g = vec![self.min_particles.max(1)];
        loop {
            let last = *g.last().unwrap();
            let next = ((last as f64 * self.factor).round() as usize).max(last + 1);
            if next > self.max_particles {
                break;
            }
            g.push(next);
        }
        g
    }
}

/// Outcome of a tuning search, with every variance measured on the way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub particles: usize,
    pub measured: Vec<(usize, f64)>,
}

/// Sample variance of the log-likelihood estimate at one particle count,
/// together with the number of collapsed runs.
pub fn log_lik_variance<T: ConditionalTarget>(
    target: &T,
    z: &Conditioner,
    particles: usize,
    repetitions: usize,
    options: &FilterOptions,
    rng: RngStream,
) -> Result<(f64, usize)> {
    let mut values = Vec::with_capacity(repetitions);
    let mut collapsed = 0;
    for r in 0..repetitions {
        let out = target.filter(z, particles, options, rng.derive(&[particles as u64, r as u64]))?;
        if out.log_lik.is_collapsed() {
            collapsed += 1;
        } else {
            values.push(out.log_lik.log_value);
        }
    }
    if values.len() < 2 {
        return Ok((f64::INFINITY, collapsed));
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (values.len() - 1) as f64;
    Ok((v, collapsed))
}

/// Smallest grid particle count whose log-likelihood variance at `z` is at
/// most `target_var`.
///
/// The first measurement is taken at the smallest grid point; the
/// approximation var ∝ 1/N predicts where to look next, after which the
/// search walks the grid one step at a time.
pub fn tune_particle_count<T: ConditionalTarget>(
    target: &T,
    z: &Conditioner,
    target_var: f64,
    options: &TuneOptions,
    rng: RngStream,
) -> Result<TuneResult> {
    if !(target_var > 0.0) {
        return Err(Error::Domain(format!("target variance must be positive, got {target_var}")));
    }
    let grid = options.grid();
    let mut measured: Vec<(usize, f64)> = Vec::new();
    let mut cache = std::collections::BTreeMap::new();
    let mut measure = |idx: usize, measured: &mut Vec<(usize, f64)>| -> Result<(f64, usize)> {
        if let Some(&v) = cache.get(&idx) {
            return Ok(v);
        }
        let r = log_lik_variance(target, z, grid[idx], options.repetitions, &options.filter, rng)?;
        measured.push((grid[idx], r.0));
        cache.insert(idx, r);
        Ok(r)
    };
    let (v0, _) = measure(0, &mut measured)?;
    if v0 <= target_var {
        return Ok(TuneResult { particles: grid[0], measured });
    }
    let last = grid.len() - 1;
    let predicted = if v0.is_finite() { grid[0] as f64 * v0 / target_var } else { grid[last] as f64 };
    let mut idx = grid.iter().position(|&g| g as f64 >= predicted).unwrap_or(last).max(1);
    if measure(idx, &mut measured)?.0 <= target_var {
        while idx > 1 && measure(idx - 1, &mut measured)?.0 <= target_var {
            idx -= 1;
        }
        return Ok(TuneResult { particles: grid[idx], measured });
    }
    while idx < last {
        idx += 1;
        if measure(idx, &mut measured)?.0 <= target_var {
            return Ok(TuneResult { particles: grid[idx], measured });
        }
    }
    let (_, collapsed) = measure(last, &mut measured)?;
    if collapsed * 5 > options.repetitions {
        return Err(Error::CollapseDominated { collapsed, runs: options.repetitions, particles: grid[last] });
    }
    log::warn!("no grid particle count reached variance {target_var}; using the largest ({})", grid[last]);
    Ok(TuneResult { particles: grid[last], measured })
}
