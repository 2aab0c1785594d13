//! Particle MCMC with pseudo-observation augmentation.
//!
//! The crate provides bootstrap and conditional particle filters that run
//! conditioned on a chosen function 𝒵 of the extended state, the three outer
//! samplers built on them (PMMH, PMMH with particle learning, particle
//! Gibbs), conjugate pseudo-observation schemes, three reference models and
//! chain diagnostics.
//!
//! Weight arithmetic, resampling, the pseudo-observation schemes and the
//! diagnostics are generic over [`Real`] (`f32` or `f64`); models and samplers
//! work in `f64`.

pub mod augmentation;
pub mod diagnostics;
pub mod error;
pub mod models;
pub mod particles;
pub mod resample;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod smc;
pub mod weights;

pub use error::{Error, Result, WeightError};
pub use particles::{ExtendedState, Genealogy, ParticleSystem};
pub use rng::{RngStream, StreamRng};
pub use scalar::Real;
pub use smc::{ConditionalTarget, Conditioner, FilterOptions};

pub type GaussianPseudoObs64 = augmentation::GaussianPseudoObs<f64>;
pub type GaussianPseudoObs32 = augmentation::GaussianPseudoObs<f32>;
pub type GammaPseudoObs64 = augmentation::GammaPseudoObs<f64>;
pub type GammaPseudoObs32 = augmentation::GammaPseudoObs<f32>;
pub type NormalizedWeights64 = weights::NormalizedWeights<f64>;
pub type NormalizedWeights32 = weights::NormalizedWeights<f32>;
pub type ChainSeries64 = diagnostics::ChainSeries<f64>;
pub type ChainSeries32 = diagnostics::ChainSeries<f32>;
