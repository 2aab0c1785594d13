//! Linear-Gaussian state-space model with an unknown observation offset.
//!
//! ```text
//! θ ~ N(0, σ_θ²)
//! X₁ = σ₁ ε,  X_t = γ X_{t−1} + σ_X ε
//! Y_t = θ + X_t + σ_Y ε
//! ```
//!
//! Also provides the exact Kalman oracle used to validate the samplers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{GaussianPseudoObs, PseudoScheme};
use crate::error::{Error, Result};
use crate::particles::ExtendedState;
use crate::rng::StreamRng;
use crate::scalar::{log_normal_pdf, Real};
use crate::smc::{ComponentChoice, ComponentSpec, Conditioner, ConditionerLayout, StateSpaceModel, StateSpaceTarget, Treatment};

pub const THETA: usize = 0;
pub const X1: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinearGaussianParams {
    pub gamma: f64,
    pub sigma1: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_theta: f64,
}

impl LinearGaussianParams {
    /// σ_X chosen so the state process has unit stationary variance.
    pub fn stationary(gamma: f64, sigma1: f64, sigma_y: f64, sigma_theta: f64) -> Self {
        Self { gamma, sigma1, sigma_x: (1.0 - gamma * gamma).sqrt(), sigma_y, sigma_theta }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma1", self.sigma1),
            ("sigmaX", self.sigma_x),
            ("sigmaY", self.sigma_y),
            ("sigmaTheta", self.sigma_theta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.gamma.is_finite() {
            return Err(Error::Domain("gamma must be finite".into()));
        }
        Ok(())
    }

    fn prior_var(&self, idx: usize) -> f64 {
        if idx == THETA {
            self.sigma_theta * self.sigma_theta
        } else {
            self.sigma1 * self.sigma1
        }
    }
}

/// Running sums over a particle's path for the θ refresh.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LgStats {
    pub count: f64,
    /// Σ (y_s − x_s)
    pub resid: f64,
}

#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    pub params: LinearGaussianParams,
    layout: ConditionerLayout,
}

impl LinearGaussianModel {
    pub fn new(params: LinearGaussianParams, theta: ComponentChoice, x1: ComponentChoice) -> Result<Self> {
        params.validate()?;
        let treat = |idx: usize, c: ComponentChoice| -> Result<Treatment> {
            Ok(match c {
                ComponentChoice::Free => Treatment::Free,
                ComponentChoice::Fixed => Treatment::Fixed,
                ComponentChoice::Pseudo { knob } => Treatment::Pseudo {
                    scheme: PseudoScheme::Gaussian(GaussianPseudoObs::new(0.0, params.prior_var(idx), knob)?),
                },
            })
        };
        let layout = ConditionerLayout::new(vec![
            ComponentSpec { name: "theta".into(), treatment: treat(THETA, theta)? },
            ComponentSpec { name: "x1".into(), treatment: treat(X1, x1)? },
        ]);
        Ok(Self { params, layout })
    }

    pub fn into_target(self, data: Vec<f64>) -> StateSpaceTarget<Self> {
        StateSpaceTarget::new(self, data, vec![false, false])
    }

    fn value(&self, z: &Conditioner, idx: usize) -> Option<f64> {
        match self.layout.treatment(idx) {
            Treatment::Fixed => Some(z.values[self.layout.slot(idx).unwrap()]),
            _ => None,
        }
    }

    /// N(mean, var) of θ given 𝒵 alone.
    fn theta_base(&self, z: &Conditioner) -> (f64, f64) {
        match self.layout.treatment(THETA) {
            Treatment::Pseudo { scheme: PseudoScheme::Gaussian(g) } => g.conditional(z.values[self.layout.slot(THETA).unwrap()]),
            _ => (0.0, self.params.prior_var(THETA)),
        }
    }
}

fn normal(mean: f64, var: f64, rng: &mut StreamRng) -> f64 {
    mean + var.sqrt() * f64::standard_normal(rng)
}

impl StateSpaceModel for LinearGaussianModel {
    type State = f64;
    type Params = f64;
    type Stats = LgStats;
    type Obs = f64;

    fn layout(&self) -> &ConditionerLayout {
        &self.layout
    }

    fn sample_initial(&self, z: &Conditioner, rng: &mut StreamRng) -> Result<(f64, f64)> {
        let p = &self.params;
        let theta = self.layout.draw(THETA, z, rng, |r| p.sigma_theta * f64::standard_normal(r))?;
        let x1 = self.layout.draw(X1, z, rng, |r| p.sigma1 * f64::standard_normal(r))?;
        Ok((theta, x1))
    }

    fn transition(&self, prev: &f64, _theta: &f64, rng: &mut StreamRng) -> f64 {
        self.params.gamma * prev + self.params.sigma_x * f64::standard_normal(rng)
    }

    fn log_obs_density(&self, x: &f64, theta: &f64, y: &f64) -> f64 {
        log_normal_pdf(*y, theta + x, self.params.sigma_y * self.params.sigma_y)
    }

    fn log_prior_z(&self, z: &Conditioner) -> f64 {
        self.layout.log_prior(z, |idx, v| log_normal_pdf(v, 0.0, self.params.prior_var(idx)))
    }

    fn supports_learning(&self) -> bool {
        true
    }

    fn initial_stats(&self, x: &f64, y: &f64) -> LgStats {
        LgStats { count: 1.0, resid: y - x }
    }

    fn update_stats(&self, stats: &mut LgStats, _prev: &f64, x: &f64, y: &f64) {
        stats.count += 1.0;
        stats.resid += y - x;
    }

    fn learning_kernel(&self, theta: &f64, stats: &LgStats, z: &Conditioner, rng: &mut StreamRng) -> Result<f64> {
        if matches!(self.layout.treatment(THETA), Treatment::Fixed) {
            return Ok(*theta);
        }
        let (m0, v0) = self.theta_base(z);
        let vy = self.params.sigma_y * self.params.sigma_y;
        let prec = 1.0 / v0 + stats.count / vy;
        let mean = (m0 / v0 + stats.resid / vy) / prec;
        Ok(normal(mean, 1.0 / prec, rng))
    }

    fn gibbs_conditioner(
        &self,
        z: &Conditioner,
        state: &ExtendedState<f64, f64>,
        data: &[f64],
        rng: &mut StreamRng,
    ) -> Result<(Conditioner, ExtendedState<f64, f64>)> {
        let p = &self.params;
        let vy = p.sigma_y * p.sigma_y;
        let vx = p.sigma_x * p.sigma_x;
        let mut out = z.clone();
        let mut s = state.clone();
        for idx in [THETA, X1] {
            let slot = self.layout.slot(idx);
            match *self.layout.treatment(idx) {
                Treatment::Free => {}
                Treatment::Pseudo { scheme } => {
                    let target = if idx == THETA { s.params } else { s.path[0] };
                    out.values[slot.unwrap()] = scheme.simulate(target, rng)?;
                }
                Treatment::Fixed if idx == THETA => {
                    let resid: f64 = data.iter().zip(&s.path).map(|(y, x)| y - x).sum();
                    let prec = 1.0 / p.prior_var(THETA) + data.len() as f64 / vy;
                    let theta = normal(resid / vy / prec, 1.0 / prec, rng);
                    out.values[slot.unwrap()] = theta;
                    s.params = theta;
                }
                Treatment::Fixed => {
                    let mut prec = 1.0 / p.prior_var(X1) + 1.0 / vy;
                    let mut num = (data[0] - s.params) / vy;
                    if s.path.len() > 1 {
                        prec += p.gamma * p.gamma / vx;
                        num += p.gamma * s.path[1] / vx;
                    }
                    let x1 = normal(num / prec, 1.0 / prec, rng);
                    out.values[slot.unwrap()] = x1;
                    s.path[0] = x1;
                }
            }
        }
        Ok((out, s))
    }

    fn apply_fixed(&self, z: &Conditioner, state: &mut ExtendedState<f64, f64>) {
        if let Some(theta) = self.value(z, THETA) {
            state.params = theta;
        }
        if let Some(x1) = self.value(z, X1) {
            state.path[0] = x1;
        }
    }

    fn log_complete_data(&self, state: &ExtendedState<f64, f64>, data: &[f64]) -> f64 {
        let p = &self.params;
        let theta = state.params;
        let vx = p.sigma_x * p.sigma_x;
        let vy = p.sigma_y * p.sigma_y;
        let mut total = log_normal_pdf(theta, 0.0, p.prior_var(THETA)) + log_normal_pdf(state.path[0], 0.0, p.prior_var(X1));
        for t in 0..data.len() {
            if t > 0 {
                total += log_normal_pdf(state.path[t], p.gamma * state.path[t - 1], vx);
            }
            total += log_normal_pdf(data[t], theta + state.path[t], vy);
        }
        total
    }

    fn log_pseudo_likelihood(&self, z: &Conditioner, state: &ExtendedState<f64, f64>) -> f64 {
        self.layout.log_pseudo_likelihood(z, |idx| if idx == THETA { state.params } else { state.path[0] })
    }

    fn consistent(&self, z: &Conditioner, state: &ExtendedState<f64, f64>) -> bool {
        self.value(z, THETA).is_none_or(|v| v == state.params) && self.value(z, X1).is_none_or(|v| v == state.path[0])
    }

    fn summary_names(&self) -> Vec<String> {
        vec!["theta".into(), "x1".into()]
    }

    fn summarize(&self, state: &ExtendedState<f64, f64>) -> Vec<f64> {
        vec![state.params, state.path[0]]
    }
}

/// Simulate `(x_{1:T}, y_{1:T})` with X₁ ~ N(0, x1_sd²).
pub fn simulate_linear_gaussian<R: Rng + ?Sized>(
    params: &LinearGaussianParams,
    theta: f64,
    x1_sd: f64,
    t_len: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(t_len);
    let mut ys = Vec::with_capacity(t_len);
    let mut x = x1_sd * f64::standard_normal(rng);
    for t in 0..t_len {
        if t > 0 {
            x = params.gamma * x + params.sigma_x * f64::standard_normal(rng);
        }
        xs.push(x);
        ys.push(theta + x + params.sigma_y * f64::standard_normal(rng));
    }
    (xs, ys)
}

/// Exact posterior summary from the Kalman oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KalmanResult {
    pub log_lik: f64,
    pub theta_mean: f64,
    pub theta_var: f64,
    pub x1_mean: f64,
    pub x1_var: f64,
}

const DEGENERATE_VAR: f64 = 1e-300;

/// Prior (mean, var) of component `idx` given 𝒵: a point mass when fixed,
/// the conjugate conditional when pseudo-observed.
fn component_prior(model: &LinearGaussianModel, z: &Conditioner, idx: usize) -> (f64, f64) {
    let layout = model.layout();
    match layout.treatment(idx) {
        Treatment::Free => (0.0, model.params.prior_var(idx)),
        Treatment::Fixed => (z.values[layout.slot(idx).unwrap()], 0.0),
        Treatment::Pseudo { scheme: PseudoScheme::Gaussian(g) } => g.conditional(z.values[layout.slot(idx).unwrap()]),
        Treatment::Pseudo { .. } => unreachable!("linear-Gaussian components use Gaussian schemes"),
    }
}

/// Exact log p(y_{1:T} | 𝒵) and posterior moments of θ and X₁, from a
/// Kalman filter on the augmented state (θ, X₁, X_t) where θ and X₁ are
/// static.
pub fn kalman_oracle(model: &LinearGaussianModel, data: &[f64], z: &Conditioner) -> Result<KalmanResult> {
    model.layout().check(z)?;
    let p = &model.params;
    let (mt, vt) = component_prior(model, z, THETA);
    let (m1, v1) = component_prior(model, z, X1);
    let mut m = [mt, m1, m1];
    let mut cov = [[vt, 0.0, 0.0], [0.0, v1, v1], [0.0, v1, v1]];
    let h = [1.0, 0.0, 1.0];
    let vy = p.sigma_y * p.sigma_y;
    let mut log_lik = 0.0;
    for (t, &y) in data.iter().enumerate() {
        if t > 0 {
            m[2] *= p.gamma;
            for r in 0..3 {
                cov[r][2] *= p.gamma;
                cov[2][r] *= p.gamma;
            }
            // cov[2][2] has now been scaled by γ twice.
            cov[2][2] += p.sigma_x * p.sigma_x;
        }
        let ph: [f64; 3] = std::array::from_fn(|r| (0..3).map(|c| cov[r][c] * h[c]).sum());
        let s = h[0] * ph[0] + h[2] * ph[2] + vy;
        if !(s > DEGENERATE_VAR) {
            return Err(Error::NumericalDegeneracy(format!("predictive variance {s} at t={}", t + 1)));
        }
        let pred = m[0] + m[2];
        log_lik += log_normal_pdf(y, pred, s);
        let innov = y - pred;
        for r in 0..3 {
            m[r] += ph[r] / s * innov;
        }
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] -= ph[r] * ph[c] / s;
            }
        }
    }
    Ok(KalmanResult { log_lik, theta_mean: m[0], theta_var: cov[0][0], x1_mean: m[1], x1_var: cov[1][1] })
}

/// An exact draw of (θ, x_{1:T}) from p(θ, x_{1:T} | y_{1:T}, 𝒵) by forward
/// filtering on (θ, X_t) and backward sampling.
pub fn kalman_posterior_draw<R: Rng + ?Sized>(
    model: &LinearGaussianModel,
    data: &[f64],
    z: &Conditioner,
    rng: &mut R,
) -> Result<ExtendedState<f64, f64>> {
    model.layout().check(z)?;
    let p = &model.params;
    let (mt, vt) = component_prior(model, z, THETA);
    let (m1, v1) = component_prior(model, z, X1);
    let vy = p.sigma_y * p.sigma_y;
    let vx = p.sigma_x * p.sigma_x;
    let mut m = [mt, m1];
    let mut c = [[vt, 0.0], [0.0, v1]];
    let mut filtered = Vec::with_capacity(data.len());
    for (t, &y) in data.iter().enumerate() {
        if t > 0 {
            m[1] *= p.gamma;
            c[0][1] *= p.gamma;
            c[1][0] *= p.gamma;
            c[1][1] = p.gamma * p.gamma * c[1][1] + vx;
        }
        let ph = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
        let s = ph[0] + ph[1] + vy;
        if !(s > DEGENERATE_VAR) {
            return Err(Error::NumericalDegeneracy(format!("predictive variance {s} at t={}", t + 1)));
        }
        let innov = y - m[0] - m[1];
        m = [m[0] + ph[0] / s * innov, m[1] + ph[1] / s * innov];
        c = [
            [c[0][0] - ph[0] * ph[0] / s, c[0][1] - ph[0] * ph[1] / s],
            [c[1][0] - ph[1] * ph[0] / s, c[1][1] - ph[1] * ph[1] / s],
        ];
        filtered.push((m, c));
    }
    let draw = |mean: f64, var: f64, rng: &mut R| if var > 0.0 { mean + var.sqrt() * f64::standard_normal(rng) } else { mean };
    let t_len = data.len();
    let (m_t, c_t) = filtered[t_len - 1];
    let theta = draw(m_t[0], c_t[0][0], rng);
    let x_given_theta = |m: [f64; 2], c: [[f64; 2]; 2]| -> (f64, f64) {
        if c[0][0] > 0.0 {
            (m[1] + c[1][0] / c[0][0] * (theta - m[0]), (c[1][1] - c[1][0] * c[1][0] / c[0][0]).max(0.0))
        } else {
            (m[1], c[1][1].max(0.0))
        }
    };
    let mut path = vec![0.0; t_len];
    let (mx, vxx) = x_given_theta(m_t, c_t);
    path[t_len - 1] = draw(mx, vxx, rng);
    for t in (0..t_len - 1).rev() {
        let (mf, cf) = filtered[t];
        let (mu, v) = x_given_theta(mf, cf);
        path[t] = if v > 0.0 {
            let prec = 1.0 / v + p.gamma * p.gamma / vx;
            draw((mu / v + p.gamma * path[t + 1] / vx) / prec, 1.0 / prec, rng)
        } else {
            mu
        };
    }
    Ok(ExtendedState::new(path, theta))
}
