use std::fmt::Debug;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::filter::{equally_weighted_set, run_conditional_particle_filter, run_particle_filter};
use super::{Conditioner, FilterOptions, StateSpaceModel};
use crate::error::{Error, Result};
use crate::models::dpmm::SubsetLabels;
use crate::particles::ExtendedState;
use crate::rng::RngStream;
use crate::weights::LogLikelihoodEstimate;

/// One filter run as seen by a sampler.
#[derive(Clone, Debug)]
pub struct FilterDraw<E> {
    pub log_lik: LogLikelihoodEstimate,
    /// A draw of 𝒳_T from the weighted system; `None` on collapse.
    pub state: Option<E>,
}

/// An equally weighted set of extended states with its likelihood estimate.
#[derive(Clone, Debug)]
pub struct ParticleSetDraw<E> {
    pub log_lik: LogLikelihoodEstimate,
    pub particles: Vec<E>,
}

/// The interface the outer samplers need from a model conditioned on data.
pub trait ConditionalTarget: Sync {
    type Extended: Clone + Send + Sync + Debug + Serialize + DeserializeOwned;

    /// Names of the entries of `Conditioner::values`.
    fn conditioner_names(&self) -> Vec<String>;

    /// Which entries of `Conditioner::values` live on (0, ∞).
    fn positive_values(&self) -> Vec<bool>;

    /// log p(𝒵); −∞ outside the support.
    fn log_prior(&self, z: &Conditioner) -> f64;

    fn filter(&self, z: &Conditioner, n: usize, options: &FilterOptions, stream: RngStream)
        -> Result<FilterDraw<Self::Extended>>;

    /// Run the filter with the refresh kernel and return an equally weighted
    /// final set.
    fn filter_particle_set(
        &self,
        _z: &Conditioner,
        _n: usize,
        _options: &FilterOptions,
        _stream: RngStream,
    ) -> Result<ParticleSetDraw<Self::Extended>> {
        Err(Error::MissingSuffStats)
    }

    fn conditional_filter(
        &self,
        _z: &Conditioner,
        _retained: &Self::Extended,
        _n: usize,
        _options: &FilterOptions,
        _stream: RngStream,
    ) -> Result<FilterDraw<Self::Extended>> {
        Err(Error::Unsupported("conditional filter".into()))
    }

    /// Exact draw from p(𝒵 | 𝒳_T, y).
    fn gibbs_update(&self, _z: &Conditioner, _state: &Self::Extended, _stream: RngStream)
        -> Result<(Conditioner, Self::Extended)> {
        Err(Error::Unsupported("exact conditioner update".into()))
    }

    /// log p(𝒵 | 𝒳_T, y) up to a constant, with fixed components of `z`
    /// substituted into the state.
    fn log_conditioner_given_state(&self, _z: &Conditioner, _state: &Self::Extended) -> Result<f64> {
        Err(Error::Unsupported("conditioner density".into()))
    }

    /// `state` with the fixed components of `z` written in.
    fn with_conditioner(&self, _z: &Conditioner, state: &Self::Extended) -> Self::Extended {
        state.clone()
    }

    /// A fresh subset-label pseudo-observation given the current state.
    fn propose_subset(&self, _state: &Self::Extended, _stream: RngStream) -> Result<Option<SubsetLabels>> {
        Ok(None)
    }

    /// log q(subset | state) for [`ConditionalTarget::propose_subset`].
    fn log_subset_proposal(&self, _subset: &SubsetLabels, _state: &Self::Extended) -> f64 {
        0.0
    }

    fn summary_names(&self) -> Vec<String>;

    fn summarize(&self, state: &Self::Extended) -> Vec<f64>;
}

/// A state-space model bound to a data series.
#[derive(Clone, Debug)]
pub struct StateSpaceTarget<M: StateSpaceModel> {
    pub model: M,
    pub data: Vec<M::Obs>,
    /// Which model parameters are positive, in layout order.
    pub positive_params: Vec<bool>,
}

impl<M: StateSpaceModel> StateSpaceTarget<M> {
    pub fn new(model: M, data: Vec<M::Obs>, positive_params: Vec<bool>) -> Self {
        Self { model, data, positive_params }
    }
}

impl<M> ConditionalTarget for StateSpaceTarget<M>
where
    M: StateSpaceModel,
    M::State: Serialize + DeserializeOwned,
    M::Params: Serialize + DeserializeOwned,
{
    type Extended = ExtendedState<M::State, M::Params>;

    fn conditioner_names(&self) -> Vec<String> {
        self.model.layout().value_names()
    }

    fn positive_values(&self) -> Vec<bool> {
        self.model.layout().value_positive(&self.positive_params)
    }

    fn log_prior(&self, z: &Conditioner) -> f64 {
        self.model.log_prior_z(z)
    }

    fn filter(&self, z: &Conditioner, n: usize, options: &FilterOptions, stream: RngStream)
        -> Result<FilterDraw<Self::Extended>> {
        let out = run_particle_filter(&self.model, &self.data, z, n, options, stream)?;
        Ok(FilterDraw { log_lik: out.log_lik, state: out.sampled })
    }

    fn filter_particle_set(
        &self,
        z: &Conditioner,
        n: usize,
        options: &FilterOptions,
        stream: RngStream,
    ) -> Result<ParticleSetDraw<Self::Extended>> {
        let options = FilterOptions { use_kernel: true, ..*options };
        let out = run_particle_filter(&self.model, &self.data, z, n, &options, stream)?;
        if out.collapsed() {
            return Ok(ParticleSetDraw { log_lik: out.log_lik, particles: Vec::new() });
        }
        let particles = equally_weighted_set(&self.model, &out, z, &options, stream)?;
        Ok(ParticleSetDraw { log_lik: out.log_lik, particles })
    }

    fn conditional_filter(
        &self,
        z: &Conditioner,
        retained: &Self::Extended,
        n: usize,
        options: &FilterOptions,
        stream: RngStream,
    ) -> Result<FilterDraw<Self::Extended>> {
        let out = run_conditional_particle_filter(&self.model, &self.data, z, retained, n, options, stream)?;
        Ok(FilterDraw { log_lik: out.log_lik, state: out.sampled })
    }

    fn gibbs_update(&self, z: &Conditioner, state: &Self::Extended, stream: RngStream)
        -> Result<(Conditioner, Self::Extended)> {
        self.model.gibbs_conditioner(z, state, &self.data, &mut stream.rng())
    }

    fn log_conditioner_given_state(&self, z: &Conditioner, state: &Self::Extended) -> Result<f64> {
        if self.model.layout().check(z).is_err() {
            return Ok(f64::NEG_INFINITY);
        }
        let mut total = self.model.log_pseudo_likelihood(z, state);
        if self.model.layout().any_fixed() {
            let s = self.with_conditioner(z, state);
            total += self.model.log_complete_data(&s, &self.data);
        }
        Ok(total)
    }

    fn with_conditioner(&self, z: &Conditioner, state: &Self::Extended) -> Self::Extended {
        let mut s = state.clone();
        self.model.apply_fixed(z, &mut s);
        s
    }

    fn summary_names(&self) -> Vec<String> {
        self.model.summary_names()
    }

    fn summarize(&self, state: &Self::Extended) -> Vec<f64> {
        self.model.summarize(state)
    }
}
