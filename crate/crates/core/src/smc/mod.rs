//! Particle filters conditioned on 𝒵.
//!
//! [`StateSpaceModel`] is the contract a Markov state-space model implements;
//! [`run_particle_filter`] and [`run_conditional_particle_filter`] are the
//! bootstrap filter and its conditional-SMC variant, both optionally
//! interleaving a parameter-refresh kernel before each propagation step.
//! [`ConditionalTarget`] is the narrower interface the outer samplers use,
//! implemented for any state-space model by [`StateSpaceTarget`] and directly
//! by the mixture model.

mod filter;
mod target;

pub use filter::{equally_weighted_set, pick_uniform, run_conditional_particle_filter, run_particle_filter, PfOutput};
pub use target::{ConditionalTarget, FilterDraw, ParticleSetDraw, StateSpaceTarget};

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::augmentation::PseudoScheme;
use crate::error::{Error, Result};
use crate::models::dpmm::SubsetLabels;
use crate::particles::ExtendedState;
use crate::resample::ResamplingScheme;
use crate::rng::StreamRng;

/// The value of 𝒵 held fixed during one filter run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Conditioner {
    /// Conditioned continuous components in layout order: fixed parameter
    /// or initial-state values, and pseudo-observations.
    pub values: Vec<f64>,
    /// Subset-label pseudo-observation (mixture model only).
    pub subset: Option<SubsetLabels>,
}

impl Conditioner {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, subset: None }
    }

    pub fn empty() -> Self {
        Self::default()
    }
}

/// How one model component enters 𝒵.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Treatment {
    /// Sampled inside the filter from its prior.
    Free,
    /// Held at the value in 𝒵.
    Fixed,
    /// Observed through a conjugate pseudo-observation held in 𝒵.
    Pseudo { scheme: PseudoScheme<f64> },
}

/// A user-level choice for one component before the model supplies priors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ComponentChoice {
    Free,
    Fixed,
    /// `knob` is the noise variance of a Gaussian scheme or the observation
    /// shape of a gamma scheme.
    Pseudo { knob: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub treatment: Treatment,
}

/// Which model components are fixed, pseudo-observed or free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionerLayout {
    pub components: Vec<ComponentSpec>,
}

impl ConditionerLayout {
    pub fn new(components: Vec<ComponentSpec>) -> Self {
        Self { components }
    }

    /// Position of component `idx` inside `Conditioner::values`, if conditioned.
    pub fn slot(&self, idx: usize) -> Option<usize> {
        if matches!(self.components[idx].treatment, Treatment::Free) {
            return None;
        }
        Some(self.components[..idx].iter().filter(|c| !matches!(c.treatment, Treatment::Free)).count())
    }

    pub fn treatment(&self, idx: usize) -> &Treatment {
        &self.components[idx].treatment
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    /// Number of conditioned components.
    pub fn dim(&self) -> usize {
        self.components.iter().filter(|c| !matches!(c.treatment, Treatment::Free)).count()
    }

    /// Names of the entries of `Conditioner::values`: the component name for
    /// fixed components, `z_<name>` for pseudo-observations.
    pub fn value_names(&self) -> Vec<String> {
        self.components
            .iter()
            .filter_map(|c| match c.treatment {
                Treatment::Free => None,
                Treatment::Fixed => Some(c.name.clone()),
                Treatment::Pseudo { .. } => Some(format!("z_{}", c.name)),
            })
            .collect()
    }

    /// Whether each value must stay strictly positive.
    pub fn value_positive(&self, positive_params: &[bool]) -> Vec<bool> {
        self.components
            .iter()
            .zip(positive_params)
            .filter_map(|(c, &pos)| match c.treatment {
                Treatment::Free => None,
                Treatment::Fixed => Some(pos),
                Treatment::Pseudo { scheme } => Some(scheme.positive()),
            })
            .collect()
    }

    pub fn check(&self, z: &Conditioner) -> Result<()> {
        if z.values.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: z.values.len() });
        }
        if z.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("non-finite conditioner value".into()));
        }
        Ok(())
    }

    /// Draw component `idx` given 𝒵: the fixed value, a draw from the
    /// pseudo-observation conditional, or a prior draw.
    pub fn draw(
        &self,
        idx: usize,
        z: &Conditioner,
        rng: &mut StreamRng,
        prior_draw: impl FnOnce(&mut StreamRng) -> f64,
    ) -> Result<f64> {
        match self.treatment(idx) {
            Treatment::Free => Ok(prior_draw(rng)),
            Treatment::Fixed => Ok(z.values[self.slot(idx).unwrap()]),
            Treatment::Pseudo { scheme } => scheme.sample_conditional(z.values[self.slot(idx).unwrap()], rng),
        }
    }

    /// log p(𝒵): the prior density of fixed components times the marginal
    /// density of pseudo-observations.
    pub fn log_prior(&self, z: &Conditioner, log_prior_component: impl Fn(usize, f64) -> f64) -> f64 {
        if z.values.len() != self.dim() {
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        let mut slot = 0;
        for (idx, c) in self.components.iter().enumerate() {
            match c.treatment {
                Treatment::Free => continue,
                Treatment::Fixed => total += log_prior_component(idx, z.values[slot]),
                Treatment::Pseudo { scheme } => total += scheme.log_marginal(z.values[slot]),
            }
            slot += 1;
        }
        total
    }

    /// Σ log p(z_c | target_c) over pseudo-observed components.
    pub fn log_pseudo_likelihood(&self, z: &Conditioner, target_value: impl Fn(usize) -> f64) -> f64 {
        let mut total = 0.0;
        for (idx, c) in self.components.iter().enumerate() {
            if let Treatment::Pseudo { scheme } = c.treatment {
                total += scheme.log_likelihood(z.values[self.slot(idx).unwrap()], target_value(idx));
            }
        }
        total
    }

    pub fn any_fixed(&self) -> bool {
        self.components.iter().any(|c| matches!(c.treatment, Treatment::Fixed))
    }
}

/// Settings shared by every filter run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterOptions {
    pub resampling: ResamplingScheme,
    /// Apply the model's parameter-refresh kernel after ancestor selection.
    pub use_kernel: bool,
    /// Propagate and weight particles on the rayon pool.
    pub parallel: bool,
    /// Resample only when ESS / N falls below this fraction. `None`
    /// resamples at every step. Ignored by the conditional filter.
    pub ess_threshold: Option<f64>,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { resampling: ResamplingScheme::Systematic, use_kernel: false, parallel: false, ess_threshold: None }
    }
}

/// A Markov state-space model whose initial law, transition, and
/// observation density can be sampled/evaluated given 𝒵.
pub trait StateSpaceModel: Sync {
    type State: Clone + Send + Sync + Debug;
    type Params: Clone + Send + Sync + Debug;
    /// Fixed-dimension sufficient statistics for parameter refresh; `()` when
    /// the model has none.
    type Stats: Clone + Send + Sync + Default;
    type Obs: Sync;

    fn layout(&self) -> &ConditionerLayout;

    /// Draw θ ~ p(θ | 𝒵) and x₁ ~ p(x₁ | 𝒵, θ), honouring fixed components.
    fn sample_initial(&self, z: &Conditioner, rng: &mut StreamRng) -> Result<(Self::Params, Self::State)>;

    fn transition(&self, prev: &Self::State, params: &Self::Params, rng: &mut StreamRng) -> Self::State;

    fn log_obs_density(&self, x: &Self::State, params: &Self::Params, y: &Self::Obs) -> f64;

    /// log p(𝒵).
    fn log_prior_z(&self, z: &Conditioner) -> f64;

    fn supports_learning(&self) -> bool {
        false
    }

    fn initial_stats(&self, _x: &Self::State, _y: &Self::Obs) -> Self::Stats {
        Self::Stats::default()
    }

    /// Fold the step (x_{t−1} → x_t, y_t) into `stats`.
    fn update_stats(&self, _stats: &mut Self::Stats, _prev: &Self::State, _x: &Self::State, _y: &Self::Obs) {}

    /// Redraw the free and pseudo-observed parameters from their full
    /// conditional given the statistics of the particle's own path.
    fn learning_kernel(
        &self,
        _params: &Self::Params,
        _stats: &Self::Stats,
        _z: &Conditioner,
        _rng: &mut StreamRng,
    ) -> Result<Self::Params> {
        Err(Error::MissingSuffStats)
    }

    /// Exact draw of 𝒵 from p(𝒵 | 𝒳_T, y): pseudo-observations by
    /// simulation, fixed components from their conjugate full conditionals.
    /// Returns the new 𝒵 and 𝒳_T with fixed components written in.
    fn gibbs_conditioner(
        &self,
        z: &Conditioner,
        state: &ExtendedState<Self::State, Self::Params>,
        data: &[Self::Obs],
        rng: &mut StreamRng,
    ) -> Result<(Conditioner, ExtendedState<Self::State, Self::Params>)>;

    /// Write the fixed components of `z` into `state`.
    fn apply_fixed(&self, z: &Conditioner, state: &mut ExtendedState<Self::State, Self::Params>);

    /// log p(θ) + log p(x_{1:T} | θ) + log p(y_{1:T} | x_{1:T}, θ).
    fn log_complete_data(&self, state: &ExtendedState<Self::State, Self::Params>, data: &[Self::Obs]) -> f64;

    /// Σ log p(z_c | 𝒳_T) over the pseudo-observed components.
    fn log_pseudo_likelihood(&self, z: &Conditioner, state: &ExtendedState<Self::State, Self::Params>) -> f64;

    /// Whether a trajectory agrees with the fixed components of `z`.
    fn consistent(&self, z: &Conditioner, state: &ExtendedState<Self::State, Self::Params>) -> bool;

    fn summary_names(&self) -> Vec<String>;

    fn summarize(&self, state: &ExtendedState<Self::State, Self::Params>) -> Vec<f64>;
}
