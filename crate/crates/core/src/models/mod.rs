//! Built-in models.

pub mod dpmm;
pub mod linear_gaussian;
pub mod stochastic_volatility;

pub use dpmm::{DpmmData, DpmmPriors, DpmmState, DpmmTarget, SubsetLabels};
pub use linear_gaussian::{kalman_oracle, LinearGaussianModel, LinearGaussianParams};
pub use stochastic_volatility::{StochasticVolatilityModel, SvParams, SvPriors};
