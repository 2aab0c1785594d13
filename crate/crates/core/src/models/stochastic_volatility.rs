//! Stochastic-volatility model.
//!
//! ```text
//! X₁ ~ N(0, σ₀²),  X_t = γ X_{t−1} + β_X^{−1/2} ε
//! Y_t = β_Y^{−1/2} exp(X_t) ε
//! γ ~ N(μ_γ, σ_γ²) on (−1, 1),  β_X ~ Gamma(a_X, b_X),  β_Y ~ Gamma(a_Y, b_Y)
//! ```
//!
//! Gamma priors use the rate parameterisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{log_gamma_pdf, GammaPseudoObs, GaussianPseudoObs, PseudoScheme};
use crate::error::{Error, Result};
use crate::particles::ExtendedState;
use crate::rng::StreamRng;
use crate::scalar::{log_normal_pdf, truncated_normal, Real};
use crate::smc::{ComponentChoice, ComponentSpec, Conditioner, ConditionerLayout, StateSpaceModel, StateSpaceTarget, Treatment};

pub const GAMMA: usize = 0;
pub const BETA_X: usize = 1;
pub const BETA_Y: usize = 2;
pub const X1: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SvParams {
    pub gamma: f64,
    pub beta_x: f64,
    pub beta_y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SvPriors {
    pub mu_gamma: f64,
    pub var_gamma: f64,
    pub a_x: f64,
    pub b_x: f64,
    pub a_y: f64,
    pub b_y: f64,
    pub sigma0: f64,
}

impl SvPriors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("varGamma", self.var_gamma),
            ("aX", self.a_x),
            ("bX", self.b_x),
            ("aY", self.a_y),
            ("bY", self.b_y),
            ("sigma0", self.sigma0),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-path sufficient statistics for the conjugate parameter refresh.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SvStats {
    /// Σ x_{s−1}² over s = 2..t
    pub sxx_prev: f64,
    /// Σ x_s x_{s−1} over s = 2..t
    pub sx_cross: f64,
    /// Σ x_s² over s = 2..t
    pub sxx_cur: f64,
    pub count_x: f64,
    pub count_y: f64,
    /// Σ y_s² e^{−2 x_s} over s = 1..t
    pub sy: f64,
}

impl SvStats {
    /// Σ (x_s − γ x_{s−1})²
    pub fn innovation_ss(&self, gamma: f64) -> f64 {
        (self.sxx_cur - 2.0 * gamma * self.sx_cross + gamma * gamma * self.sxx_prev).max(0.0)
    }

    pub fn from_path(path: &[f64], data: &[f64]) -> Self {
        let mut s = SvStats { count_y: 1.0, sy: data[0] * data[0] * (-2.0 * path[0]).exp(), ..Default::default() };
        for t in 1..path.len() {
            s.push(path[t - 1], path[t], data[t]);
        }
        s
    }

    fn push(&mut self, prev: f64, x: f64, y: f64) {
        self.sxx_prev += prev * prev;
        self.sx_cross += x * prev;
        self.sxx_cur += x * x;
        self.count_x += 1.0;
        self.count_y += 1.0;
        self.sy += y * y * (-2.0 * x).exp();
    }
}

#[derive(Clone, Debug)]
pub struct StochasticVolatilityModel {
    pub priors: SvPriors,
    layout: ConditionerLayout,
}

fn gamma_draw(shape: f64, rate: f64, rng: &mut StreamRng) -> f64 {
    f64::standard_gamma(shape, rng) / rate
}

impl StochasticVolatilityModel {
    /// `choices` are for (γ, β_X, β_Y, X₁).
    pub fn new(priors: SvPriors, choices: [ComponentChoice; 4]) -> Result<Self> {
        priors.validate()?;
        let names = ["gamma", "beta_x", "beta_y", "x1"];
        let mut components = Vec::with_capacity(4);
        for (idx, c) in choices.into_iter().enumerate() {
            let treatment = match c {
                ComponentChoice::Free => Treatment::Free,
                ComponentChoice::Fixed => Treatment::Fixed,
                ComponentChoice::Pseudo { knob } => Treatment::Pseudo {
                    scheme: match idx {
                        GAMMA => PseudoScheme::Gaussian(
                            GaussianPseudoObs::new(priors.mu_gamma, priors.var_gamma, knob)?.truncated(-1.0, 1.0),
                        ),
                        BETA_X => PseudoScheme::Gamma(GammaPseudoObs::new(priors.a_x, priors.b_x, knob)?),
                        BETA_Y => PseudoScheme::Gamma(GammaPseudoObs::new(priors.a_y, priors.b_y, knob)?),
                        _ => PseudoScheme::Gaussian(GaussianPseudoObs::new(0.0, priors.sigma0 * priors.sigma0, knob)?),
                    },
                },
            };
            components.push(ComponentSpec { name: names[idx].into(), treatment });
        }
        Ok(Self { priors, layout: ConditionerLayout::new(components) })
    }

    pub fn into_target(self, data: Vec<f64>) -> StateSpaceTarget<Self> {
        StateSpaceTarget::new(self, data, vec![false, true, true, false])
    }

    fn value(&self, z: &Conditioner, idx: usize) -> Option<f64> {
        match self.layout.treatment(idx) {
            Treatment::Fixed => Some(z.values[self.layout.slot(idx).unwrap()]),
            _ => None,
        }
    }

    fn log_prior_component(&self, idx: usize, v: f64) -> f64 {
        let p = &self.priors;
        match idx {
            GAMMA => {
                GaussianPseudoObs { prior_mean: p.mu_gamma, prior_var: p.var_gamma, noise_var: 1.0, bounds: Some((-1.0, 1.0)) }
                    .log_prior(v)
            }
            BETA_X => log_gamma_pdf(v, p.a_x, p.b_x),
            BETA_Y => log_gamma_pdf(v, p.a_y, p.b_y),
            _ => log_normal_pdf(v, 0.0, p.sigma0 * p.sigma0),
        }
    }

    /// Untruncated Normal (mean, var) for γ given 𝒵 alone.
    fn gamma_base(&self, z: &Conditioner) -> (f64, f64) {
        match self.layout.treatment(GAMMA) {
            Treatment::Pseudo { scheme: PseudoScheme::Gaussian(g) } => g.conditional(z.values[self.layout.slot(GAMMA).unwrap()]),
            _ => (self.priors.mu_gamma, self.priors.var_gamma),
        }
    }

    /// Gamma (shape, rate) for a precision given 𝒵 alone.
    fn beta_base(&self, z: &Conditioner, idx: usize) -> Result<(f64, f64)> {
        match self.layout.treatment(idx) {
            Treatment::Pseudo { scheme: PseudoScheme::Gamma(g) } => g.conditional(z.values[self.layout.slot(idx).unwrap()]),
            _ if idx == BETA_X => Ok((self.priors.a_x, self.priors.b_x)),
            _ => Ok((self.priors.a_y, self.priors.b_y)),
        }
    }

    fn draw_gamma_param(&self, z: &Conditioner, stats: &SvStats, beta_x: f64, rng: &mut StreamRng) -> f64 {
        let (m0, v0) = self.gamma_base(z);
        let prec = 1.0 / v0 + beta_x * stats.sxx_prev;
        let mean = (m0 / v0 + beta_x * stats.sx_cross) / prec;
        truncated_normal(mean, 1.0 / prec, -1.0, 1.0, rng)
    }

    fn draw_beta_x(&self, z: &Conditioner, stats: &SvStats, gamma: f64, rng: &mut StreamRng) -> Result<f64> {
        let (a, b) = self.beta_base(z, BETA_X)?;
        Ok(gamma_draw(a + 0.5 * stats.count_x, b + 0.5 * stats.innovation_ss(gamma), rng))
    }

    fn draw_beta_y(&self, z: &Conditioner, stats: &SvStats, rng: &mut StreamRng) -> Result<f64> {
        let (a, b) = self.beta_base(z, BETA_Y)?;
        Ok(gamma_draw(a + 0.5 * stats.count_y, b + 0.5 * stats.sy, rng))
    }

    /// Full conditional (shape, rate) of β_Y given the statistics.
    pub fn beta_y_conditional(&self, z: &Conditioner, stats: &SvStats) -> Result<(f64, f64)> {
        let (a, b) = self.beta_base(z, BETA_Y)?;
        Ok((a + 0.5 * stats.count_y, b + 0.5 * stats.sy))
    }

    /// Full conditional (shape, rate) of β_X given the statistics and γ.
    pub fn beta_x_conditional(&self, z: &Conditioner, stats: &SvStats, gamma: f64) -> Result<(f64, f64)> {
        let (a, b) = self.beta_base(z, BETA_X)?;
        Ok((a + 0.5 * stats.count_x, b + 0.5 * stats.innovation_ss(gamma)))
    }

    fn is_fixed(&self, idx: usize) -> bool {
        matches!(self.layout.treatment(idx), Treatment::Fixed)
    }
}

impl StateSpaceModel for StochasticVolatilityModel {
    type State = f64;
    type Params = SvParams;
    type Stats = SvStats;
    type Obs = f64;

    fn layout(&self) -> &ConditionerLayout {
        &self.layout
    }

    fn sample_initial(&self, z: &Conditioner, rng: &mut StreamRng) -> Result<(SvParams, f64)> {
        let p = &self.priors;
        let gamma = self.layout.draw(GAMMA, z, rng, |r| truncated_normal(p.mu_gamma, p.var_gamma, -1.0, 1.0, r))?;
        let beta_x = self.layout.draw(BETA_X, z, rng, |r| gamma_draw(p.a_x, p.b_x, r))?;
        let beta_y = self.layout.draw(BETA_Y, z, rng, |r| gamma_draw(p.a_y, p.b_y, r))?;
        let x1 = self.layout.draw(X1, z, rng, |r| p.sigma0 * f64::standard_normal(r))?;
        Ok((SvParams { gamma, beta_x, beta_y }, x1))
    }

    fn transition(&self, prev: &f64, params: &SvParams, rng: &mut StreamRng) -> f64 {
        params.gamma * prev + f64::standard_normal(rng) / params.beta_x.sqrt()
    }

    fn log_obs_density(&self, x: &f64, params: &SvParams, y: &f64) -> f64 {
        // Log space so extreme states give -inf instead of inf/inf.
        let b = params.beta_y;
        let v = -0.5 * std::f64::consts::TAU.ln() - x + 0.5 * b.ln() - 0.5 * b * y * y * (-2.0 * x).exp();
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn log_prior_z(&self, z: &Conditioner) -> f64 {
        self.layout.log_prior(z, |idx, v| self.log_prior_component(idx, v))
    }

    fn supports_learning(&self) -> bool {
        true
    }

    fn initial_stats(&self, x: &f64, y: &f64) -> SvStats {
        SvStats { count_y: 1.0, sy: y * y * (-2.0 * x).exp(), ..Default::default() }
    }

    fn update_stats(&self, stats: &mut SvStats, prev: &f64, x: &f64, y: &f64) {
        stats.push(*prev, *x, *y);
    }

    fn learning_kernel(&self, params: &SvParams, stats: &SvStats, z: &Conditioner, rng: &mut StreamRng) -> Result<SvParams> {
        let mut out = *params;
        if !self.is_fixed(GAMMA) {
            out.gamma = self.draw_gamma_param(z, stats, out.beta_x, rng);
        }
        if !self.is_fixed(BETA_X) {
            out.beta_x = self.draw_beta_x(z, stats, out.gamma, rng)?;
        }
        if !self.is_fixed(BETA_Y) {
            out.beta_y = self.draw_beta_y(z, stats, rng)?;
        }
        Ok(out)
    }

    fn gibbs_conditioner(
        &self,
        z: &Conditioner,
        state: &ExtendedState<f64, SvParams>,
        data: &[f64],
        rng: &mut StreamRng,
    ) -> Result<(Conditioner, ExtendedState<f64, SvParams>)> {
        if self.is_fixed(X1) {
            return Err(Error::Config("x1 has no conjugate full conditional in this model; use a Metropolis update".into()));
        }
        let stats = SvStats::from_path(&state.path, data);
        let mut out = z.clone();
        let mut s = state.clone();
        for idx in [GAMMA, BETA_X, BETA_Y, X1] {
            let slot = self.layout.slot(idx);
            match *self.layout.treatment(idx) {
                Treatment::Free => {}
                Treatment::Pseudo { scheme } => {
                    let target = match idx {
                        GAMMA => s.params.gamma,
                        BETA_X => s.params.beta_x,
                        BETA_Y => s.params.beta_y,
                        _ => s.path[0],
                    };
                    out.values[slot.unwrap()] = scheme.simulate(target, rng)?;
                }
                Treatment::Fixed => {
                    let v = match idx {
                        GAMMA => {
                            s.params.gamma = self.draw_gamma_param(z, &stats, s.params.beta_x, rng);
                            s.params.gamma
                        }
                        BETA_X => {
                            s.params.beta_x = self.draw_beta_x(z, &stats, s.params.gamma, rng)?;
                            s.params.beta_x
                        }
                        _ => {
                            s.params.beta_y = self.draw_beta_y(z, &stats, rng)?;
                            s.params.beta_y
                        }
                    };
                    out.values[slot.unwrap()] = v;
                }
            }
        }
        Ok((out, s))
    }

    fn apply_fixed(&self, z: &Conditioner, state: &mut ExtendedState<f64, SvParams>) {
        if let Some(v) = self.value(z, GAMMA) {
            state.params.gamma = v;
        }
        if let Some(v) = self.value(z, BETA_X) {
            state.params.beta_x = v;
        }
        if let Some(v) = self.value(z, BETA_Y) {
            state.params.beta_y = v;
        }
        if let Some(v) = self.value(z, X1) {
            state.path[0] = v;
        }
    }

    fn log_complete_data(&self, state: &ExtendedState<f64, SvParams>, data: &[f64]) -> f64 {
        let p = state.params;
        let mut total = self.log_prior_component(GAMMA, p.gamma)
            + self.log_prior_component(BETA_X, p.beta_x)
            + self.log_prior_component(BETA_Y, p.beta_y)
            + self.log_prior_component(X1, state.path[0]);
        if !total.is_finite() {
            return f64::NEG_INFINITY;
        }
        for t in 0..data.len() {
            if t > 0 {
                total += log_normal_pdf(state.path[t], p.gamma * state.path[t - 1], 1.0 / p.beta_x);
            }
            total += self.log_obs_density(&state.path[t], &p, &data[t]);
        }
        total
    }

    fn log_pseudo_likelihood(&self, z: &Conditioner, state: &ExtendedState<f64, SvParams>) -> f64 {
        self.layout.log_pseudo_likelihood(z, |idx| match idx {
            GAMMA => state.params.gamma,
            BETA_X => state.params.beta_x,
            BETA_Y => state.params.beta_y,
            _ => state.path[0],
        })
    }

    fn consistent(&self, z: &Conditioner, state: &ExtendedState<f64, SvParams>) -> bool {
        let p = &state.params;
        self.value(z, GAMMA).is_none_or(|v| v == p.gamma)
            && self.value(z, BETA_X).is_none_or(|v| v == p.beta_x)
            && self.value(z, BETA_Y).is_none_or(|v| v == p.beta_y)
            && self.value(z, X1).is_none_or(|v| v == state.path[0])
    }

    fn summary_names(&self) -> Vec<String> {
        ["gamma", "beta_x", "beta_y", "x1"].iter().map(|s| s.to_string()).collect()
    }

    fn summarize(&self, state: &ExtendedState<f64, SvParams>) -> Vec<f64> {
        vec![state.params.gamma, state.params.beta_x, state.params.beta_y, state.path[0]]
    }
}

/// Simulate `(x_{1:T}, y_{1:T})` with X₁ ~ N(0, σ₀²).
pub fn simulate_sv<R: Rng + ?Sized>(params: &SvParams, sigma0: f64, t_len: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let sx = 1.0 / params.beta_x.sqrt();
    let sy = 1.0 / params.beta_y.sqrt();
    let mut xs = Vec::with_capacity(t_len);
    let mut ys = Vec::with_capacity(t_len);
    let mut x = sigma0 * f64::standard_normal(rng);
    for t in 0..t_len {
        if t > 0 {
            x = params.gamma * x + sx * f64::standard_normal(rng);
        }
        xs.push(x);
        ys.push(sy * x.exp() * f64::standard_normal(rng));
    }
    (xs, ys)
}
