//! Outer MCMC drivers: particle marginal Metropolis-Hastings, its
//! particle-learning variant, and particle Gibbs.
//!
//! Every iteration draws its randomness from streams keyed by the iteration
//! number, so a chain restored from a [`Checkpoint`] continues exactly as an
//! uninterrupted run would.

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::log_gamma_pdf;
use crate::error::{Error, Result};
use crate::rng::{tag, RngStream};
use crate::scalar::{log_normal_pdf, Real};
use crate::smc::{pick_uniform, ConditionalTarget, Conditioner, FilterOptions};

/// Fixed proposal used by independence updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "camelCase")]
pub enum IndependenceDist {
    Normal { mean: f64, var: f64 },
    /// Shape/rate parameterisation.
    Gamma { shape: f64, rate: f64 },
    Categorical { support: Vec<f64>, probs: Vec<f64> },
}

impl IndependenceDist {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Normal { mean, var } => mean + var.sqrt() * f64::standard_normal(rng),
            Self::Gamma { shape, rate } => f64::standard_gamma(*shape, rng) / rate,
            Self::Categorical { support, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (s, p) in support.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *s;
                    }
                }
                *support.last().expect("non-empty support")
            }
        }
    }

    fn log_density(&self, x: f64) -> f64 {
        match self {
            Self::Normal { mean, var } => log_normal_pdf(x, *mean, *var),
            Self::Gamma { shape, rate } => log_gamma_pdf(x, *shape, *rate),
            Self::Categorical { support, probs } => {
                support.iter().zip(probs).find(|(s, _)| **s == x).map_or(f64::NEG_INFINITY, |(_, p)| p.ln())
            }
        }
    }
}

/// How one component of 𝒵 is updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ProposalKind {
    #[serde(rename_all = "camelCase")]
    RandomWalkNormal { step_var: f64 },
    /// Random walk on the log of a positive component.
    #[serde(rename_all = "camelCase")]
    RandomWalkLogScale { step_var: f64 },
    Independence(IndependenceDist),
    /// Exact draw from the full conditional (particle Gibbs only).
    FullConditional,
}

/// One proposal entry per conditioned component, by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub components: Vec<(String, ProposalKind)>,
}

impl ProposalSpec {
    pub fn new(components: Vec<(String, ProposalKind)>) -> Self {
        Self { components }
    }

    /// Every entry of `Conditioner::values` gets a full-conditional update.
    pub fn full_conditional(names: &[String]) -> Self {
        Self { components: names.iter().map(|n| (n.clone(), ProposalKind::FullConditional)).collect() }
    }

    /// Kinds ordered to match `names`, checking that each name has exactly
    /// one entry and nothing else is listed.
    fn resolve(&self, names: &[String]) -> Result<Vec<ProposalKind>> {
        for (name, _) in &self.components {
            if !names.contains(name) {
                return Err(Error::Config(format!("proposal for unknown component {name:?}")));
            }
        }
        names
            .iter()
            .map(|n| {
                let hits: Vec<_> = self.components.iter().filter(|(m, _)| m == n).collect();
                match hits.len() {
                    1 => Ok(hits[0].1.clone()),
                    0 => Err(Error::Config(format!("no proposal for component {n:?}"))),
                    _ => Err(Error::Config(format!("more than one proposal for component {n:?}"))),
                }
            })
            .collect()
    }
}

/// Propose new values; returns them with log q(z | z′) − log q(z′ | z).
fn propose_values<R: Rng + ?Sized>(kinds: &[ProposalKind], current: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
    let mut out = Vec::with_capacity(current.len());
    let mut log_q = 0.0;
    for (kind, &z) in kinds.iter().zip(current) {
        let zp = match kind {
            ProposalKind::RandomWalkNormal { step_var } => z + step_var.sqrt() * f64::standard_normal(rng),
            ProposalKind::RandomWalkLogScale { step_var } => {
                if !(z > 0.0) {
                    return Err(Error::InvalidState(format!("log-scale walk from non-positive value {z}")));
                }
                let zp = z * (step_var.sqrt() * f64::standard_normal(rng)).exp();
                log_q += zp.ln() - z.ln();
                zp
            }
            ProposalKind::Independence(d) => {
                let zp = d.sample(rng);
                log_q += d.log_density(z) - d.log_density(zp);
                zp
            }
            ProposalKind::FullConditional => {
                return Err(Error::Config("full-conditional updates need particle Gibbs".into()));
            }
        };
        out.push(zp);
    }
    Ok((out, log_q))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "pmmh")]
    Pmmh,
    #[serde(rename = "pmmh-pl")]
    PmmhParticleLearning,
    #[serde(rename = "pgibbs")]
    ParticleGibbs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainConfig {
    pub particles: usize,
    pub iterations: usize,
    pub filter: FilterOptions,
}

/// {𝒵, 𝒳_T, log p̂(y | 𝒵)} plus the stored particle set for the
/// particle-learning sampler.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "E: Serialize", deserialize = "E: serde::de::DeserializeOwned"))]
pub struct ChainState<E> {
    pub z: Conditioner,
    pub state: E,
    pub log_lik: f64,
    pub log_prior: f64,
    pub particle_set: Option<Vec<E>>,
}

/// Everything needed to continue a chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "E: Serialize", deserialize = "E: serde::de::DeserializeOwned"))]
pub struct Checkpoint<E> {
    pub iteration: usize,
    pub accepted: usize,
    pub chain: ChainState<E>,
}

/// One recorded iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iteration: usize,
    /// Tracked summaries of 𝒳_T (model-defined, e.g. θ and X₁).
    pub summary: Vec<f64>,
    pub z: Vec<f64>,
    pub log_lik: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct ChainOutput<E> {
    pub summary_names: Vec<String>,
    pub z_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub acceptance_rate: f64,
    pub final_state: ChainState<E>,
}

impl<E> ChainOutput<E> {
    /// Trace of one tracked summary.
    pub fn trace(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.summary_names.iter().position(|n| n == name)?;
        Some(self.samples.iter().map(|s| s.summary[idx]).collect())
    }

    pub fn z_trace(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.z_names.iter().position(|n| n == name)?;
        Some(self.samples.iter().map(|s| s.z[idx]).collect())
    }
}

const MAX_INIT_ATTEMPTS: u64 = 100;

/// A step-able chain of any of the three samplers.
pub struct Chain<'a, T: ConditionalTarget> {
    target: &'a T,
    kind: SamplerKind,
    kinds: Vec<ProposalKind>,
    config: ChainConfig,
    stream: RngStream,
    chain: ChainState<T::Extended>,
    iteration: usize,
    accepted: usize,
}

impl<'a, T: ConditionalTarget> Chain<'a, T> {
    /// Start a chain at `z0`, drawing the initial state from an
    /// unconditional filter run.
    pub fn new(
        target: &'a T,
        kind: SamplerKind,
        proposal: &ProposalSpec,
        config: ChainConfig,
        z0: Conditioner,
        stream: RngStream,
    ) -> Result<Self> {
        let kinds = Self::check(target, kind, proposal, &config)?;
        let log_prior = target.log_prior(&z0);
        if !log_prior.is_finite() {
            return Err(Error::InvalidState("initial conditioner has zero prior density".into()));
        }
        let init = stream.child(tag::INIT);
        let mut chain = None;
        for attempt in 0..MAX_INIT_ATTEMPTS {
            let s = init.child(attempt);
            if kind == SamplerKind::PmmhParticleLearning {
                let set = target.filter_particle_set(&z0, config.particles, &config.filter, s)?;
                if set.log_lik.is_collapsed() {
                    continue;
                }
                let state = pick_uniform(&set.particles, &mut s.child(tag::REFRESH).rng());
                chain = Some(ChainState {
                    z: z0.clone(),
                    state,
                    log_lik: set.log_lik.log_value,
                    log_prior,
                    particle_set: Some(set.particles),
                });
            } else {
                let draw = target.filter(&z0, config.particles, &config.filter, s)?;
                if let Some(state) = draw.state {
                    let state = target.with_conditioner(&z0, &state);
                    chain = Some(ChainState { z: z0.clone(), state, log_lik: draw.log_lik.log_value, log_prior, particle_set: None });
                }
            }
            if chain.is_some() {
                break;
            }
        }
        let chain = chain.ok_or(Error::CollapseDominated {
            collapsed: MAX_INIT_ATTEMPTS as usize,
            runs: MAX_INIT_ATTEMPTS as usize,
            particles: config.particles,
        })?;
        Ok(Self { target, kind, kinds, config, stream, chain, iteration: 0, accepted: 0 })
    }

    /// Continue from a checkpoint.
    pub fn resume(
        target: &'a T,
        kind: SamplerKind,
        proposal: &ProposalSpec,
        config: ChainConfig,
        stream: RngStream,
        checkpoint: Checkpoint<T::Extended>,
    ) -> Result<Self> {
        let kinds = Self::check(target, kind, proposal, &config)?;
        Ok(Self {
            target,
            kind,
            kinds,
            config,
            stream,
            chain: checkpoint.chain,
            iteration: checkpoint.iteration,
            accepted: checkpoint.accepted,
        })
    }

    fn check(target: &T, kind: SamplerKind, proposal: &ProposalSpec, config: &ChainConfig) -> Result<Vec<ProposalKind>> {
        if config.particles == 0 {
            return Err(Error::Config("particle count must be at least 1".into()));
        }
        let kinds = proposal.resolve(&target.conditioner_names())?;
        let full = kinds.iter().filter(|k| matches!(k, ProposalKind::FullConditional)).count();
        match kind {
            SamplerKind::ParticleGibbs if full != 0 && full != kinds.len() => Err(Error::Config(
                "particle Gibbs needs either all full-conditional or all Metropolis updates".into(),
            )),
            SamplerKind::Pmmh | SamplerKind::PmmhParticleLearning if full > 0 => {
                Err(Error::Config("full-conditional updates need particle Gibbs".into()))
            }
            _ => Ok(kinds),
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn state(&self) -> &ChainState<T::Extended> {
        &self.chain
    }

    pub fn acceptance_rate(&self) -> f64 {
        match self.kind {
            SamplerKind::ParticleGibbs => 1.0,
            _ if self.iteration == 0 => 0.0,
            _ => self.accepted as f64 / self.iteration as f64,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<T::Extended> {
        Checkpoint { iteration: self.iteration, accepted: self.accepted, chain: self.chain.clone() }
    }

    fn record(&self, accepted: bool) -> Sample {
        Sample {
            iteration: self.iteration,
            summary: self.target.summarize(&self.chain.state),
            z: self.chain.z.values.clone(),
            log_lik: self.chain.log_lik,
            accepted,
        }
    }

    /// Advance one iteration and record it.
    pub fn step(&mut self) -> Result<Sample> {
        self.iteration += 1;
        let it = self.stream.derive(&[self.iteration as u64]);
        let accepted = match self.kind {
            SamplerKind::Pmmh | SamplerKind::PmmhParticleLearning => self.mh_step(it)?,
            SamplerKind::ParticleGibbs => {
                self.gibbs_step(it)?;
                true
            }
        };
        if accepted {
            self.accepted += 1;
        }
        Ok(self.record(accepted))
    }

    fn mh_step(&mut self, it: RngStream) -> Result<bool> {
        let target = self.target;
        let cur = &self.chain;
        let (values, mut log_ratio) = propose_values(&self.kinds, &cur.z.values, &mut it.child(tag::PROPOSAL).rng())?;
        let subset = match &cur.z.subset {
            Some(_) => target.propose_subset(&cur.state, it.child(tag::GIBBS))?,
            None => None,
        };
        let proposed = Conditioner { values, subset };
        let log_prior = target.log_prior(&proposed);
        let learning = self.kind == SamplerKind::PmmhParticleLearning;
        let refresh = |set: &[T::Extended]| pick_uniform(set, &mut it.child(tag::REFRESH).rng());
        if !(log_prior > f64::NEG_INFINITY) {
            if learning {
                self.chain.state = refresh(self.chain.particle_set.as_deref().unwrap_or_default());
            }
            return Ok(false);
        }
        let filter_stream = it.child(tag::FILTER);
        let (log_lik, state, set) = if learning {
            let draw = target.filter_particle_set(&proposed, self.config.particles, &self.config.filter, filter_stream)?;
            if draw.log_lik.is_collapsed() {
                self.chain.state = refresh(self.chain.particle_set.as_deref().unwrap_or_default());
                return Ok(false);
            }
            (draw.log_lik.log_value, None, Some(draw.particles))
        } else {
            let draw = target.filter(&proposed, self.config.particles, &self.config.filter, filter_stream)?;
            match draw.state {
                Some(s) => (draw.log_lik.log_value, Some(s), None),
                None => return Ok(false),
            }
        };
        if let (Some(old), Some(new)) = (&cur.z.subset, &proposed.subset) {
            let new_state = state.as_ref().expect("subset updates use the plain filter");
            log_ratio += target.log_subset_proposal(old, new_state) - target.log_subset_proposal(new, &cur.state);
        }
        let log_alpha = if cur.log_lik == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            log_lik + log_prior - cur.log_lik - cur.log_prior + log_ratio
        };
        let u: f64 = it.child(tag::ACCEPT).rng().random();
        let accept = log_alpha >= 0.0 || u.ln() < log_alpha;
        if accept {
            self.chain = ChainState {
                state: match state {
                    Some(s) => target.with_conditioner(&proposed, &s),
                    None => self.chain.state.clone(),
                },
                z: proposed,
                log_lik,
                log_prior,
                particle_set: set,
            };
        }
        if learning {
            self.chain.state = refresh(self.chain.particle_set.as_deref().unwrap_or_default());
        }
        Ok(accept)
    }

    fn gibbs_step(&mut self, it: RngStream) -> Result<()> {
        let target = self.target;
        if !self.chain.z.values.is_empty() || self.chain.z.subset.is_some() {
            if self.kinds.iter().all(|k| matches!(k, ProposalKind::FullConditional)) {
                let (z, state) = target.gibbs_update(&self.chain.z, &self.chain.state, it.child(tag::GIBBS))?;
                self.chain.z = z;
                self.chain.state = state;
            } else {
                let cur = &self.chain;
                let (values, log_q) = propose_values(&self.kinds, &cur.z.values, &mut it.child(tag::PROPOSAL).rng())?;
                let proposed = Conditioner { values, subset: cur.z.subset.clone() };
                let new_lp = target.log_conditioner_given_state(&proposed, &cur.state)?;
                if new_lp > f64::NEG_INFINITY {
                    let old_lp = target.log_conditioner_given_state(&cur.z, &cur.state)?;
                    let log_alpha = new_lp - old_lp + log_q;
                    let u: f64 = it.child(tag::ACCEPT).rng().random();
                    if log_alpha >= 0.0 || u.ln() < log_alpha {
                        self.chain.state = target.with_conditioner(&proposed, &cur.state);
                        self.chain.z = proposed;
                    }
                }
            }
            self.chain.log_prior = target.log_prior(&self.chain.z);
        }
        let draw = target.conditional_filter(
            &self.chain.z,
            &self.chain.state,
            self.config.particles,
            &self.config.filter,
            it.child(tag::FILTER),
        )?;
        if let Some(state) = draw.state {
            self.chain.state = state;
            self.chain.log_lik = draw.log_lik.log_value;
        }
        Ok(())
    }

    /// Run the remaining iterations up to `config.iterations`.
    pub fn run_to_end(&mut self, mut on_sample: impl FnMut(&Self, &Sample) -> Result<()>) -> Result<()> {
        let total = self.config.iterations;
        let beat = (total / 10).max(1);
        while self.iteration < total {
            let s = self.step()?;
            on_sample(self, &s)?;
            if self.iteration % beat == 0 {
                info!("iteration {}/{} acceptance {:.3}", self.iteration, total, self.acceptance_rate());
            }
        }
        Ok(())
    }

    pub fn finish(self, samples: Vec<Sample>) -> ChainOutput<T::Extended> {
        ChainOutput {
            summary_names: self.target.summary_names(),
            z_names: self.target.conditioner_names(),
            acceptance_rate: self.acceptance_rate(),
            samples,
            final_state: self.chain,
        }
    }
}

fn run_chain<T: ConditionalTarget>(
    target: &T,
    kind: SamplerKind,
    z0: Conditioner,
    proposal: &ProposalSpec,
    config: ChainConfig,
    stream: RngStream,
) -> Result<ChainOutput<T::Extended>> {
    let mut chain = Chain::new(target, kind, proposal, config, z0, stream)?;
    let mut samples = Vec::with_capacity(config.iterations);
    chain.run_to_end(|_, s| {
        samples.push(s.clone());
        Ok(())
    })?;
    Ok(chain.finish(samples))
}

/// Particle marginal Metropolis-Hastings.
pub fn run_pmmh<T: ConditionalTarget>(
    target: &T,
    z0: Conditioner,
    proposal: &ProposalSpec,
    config: ChainConfig,
    stream: RngStream,
) -> Result<ChainOutput<T::Extended>> {
    run_chain(target, SamplerKind::Pmmh, z0, proposal, config, stream)
}

/// PMMH carrying the equally weighted particle set from a filter with the
/// parameter-refresh kernel; the reported state is redrawn uniformly from the
/// stored set every iteration.
pub fn run_pmmh_particle_learning<T: ConditionalTarget>(
    target: &T,
    z0: Conditioner,
    proposal: &ProposalSpec,
    config: ChainConfig,
    stream: RngStream,
) -> Result<ChainOutput<T::Extended>> {
    run_chain(target, SamplerKind::PmmhParticleLearning, z0, proposal, config, stream)
}

/// Particle Gibbs: a 𝒵 update given 𝒳_T, then a conditional-SMC refresh of
/// 𝒳_T given 𝒵.
pub fn run_particle_gibbs<T: ConditionalTarget>(
    target: &T,
    z0: Conditioner,
    z_update: &ProposalSpec,
    config: ChainConfig,
    stream: RngStream,
) -> Result<ChainOutput<T::Extended>> {
    run_chain(target, SamplerKind::ParticleGibbs, z0, z_update, config, stream)
}
