//! Bayesian meta-analysis over the fixed/random × null/alternative ensemble.
//!
//! Marginal likelihoods come from deterministic adaptive quadrature: μ
//! directly, τ through `u = ln τ`. The random alternative nests the μ integral
//! inside the τ integral.

mod bma;
pub mod distributions;
mod marginal;
mod posterior;
pub mod quadrature;

pub use bma::{
    bma, fit, model_marginals, posterior_density, posterior_density_with, BayesFit, BmaOptions,
    BmaResult, ModelEstimate, ModelMarginals, ModelProbs, UnconditionalSummary,
};
pub use distributions::{EffectPrior, HeterogeneityPrior, PriorSpec};
pub use marginal::{log_marginal, Model};
pub use posterior::{
    transform_posterior, Parameter, PosteriorDensity, PosteriorModel, PosteriorSummary,
    TransformedSummary, GRID_POINTS,
};
