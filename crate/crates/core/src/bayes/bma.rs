//! Bayes factors and model-averaged summaries.

use serde::{Deserialize, Serialize};

use super::distributions::PriorSpec;
use super::marginal::{Engine, Model};
use super::posterior::{
    Cdf, Components, Parameter, PosteriorDensity, PosteriorModel, PosteriorSummary,
};
use crate::effectsize::EffectEstimate;
use crate::error::{Error, Result};

/// Probabilities over the four models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProbs {
    pub fixed_null: f64,
    pub fixed_alt: f64,
    pub random_null: f64,
    pub random_alt: f64,
}

impl Default for ModelProbs {
    fn default() -> Self {
        ModelProbs { fixed_null: 0.25, fixed_alt: 0.25, random_null: 0.25, random_alt: 0.25 }
    }
}

impl ModelProbs {
    pub fn from_array(p: [f64; 4]) -> Self {
        ModelProbs { fixed_null: p[0], fixed_alt: p[1], random_null: p[2], random_alt: p[3] }
    }

    /// Ordered as [`Model::ALL`].
    pub fn to_array(self) -> [f64; 4] {
        [self.fixed_null, self.fixed_alt, self.random_null, self.random_alt]
    }

    pub fn get(&self, model: Model) -> f64 {
        self.to_array()[model as usize]
    }

    /// Prior probabilities must be a distribution with mass on both the
    /// effect and the no-effect side, otherwise the inclusion Bayes factor
    /// is undefined.
    pub fn validate(&self) -> Result<()> {
        let p = self.to_array();
        for (m, v) in Model::ALL.iter().zip(p) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    format!("prior_model_probs.{}", model_key(*m)),
                    format!("must be a probability, got {v}"),
                ));
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("prior_model_probs", format!("must sum to 1, got {sum}")));
        }
        if self.fixed_alt + self.random_alt == 0.0 || self.fixed_null + self.random_null == 0.0 {
            return Err(Error::invalid(
                "prior_model_probs",
                "both the effect and the no-effect models need nonzero prior mass",
            ));
        }
        Ok(())
    }
}

fn model_key(m: Model) -> &'static str {
    match m {
        Model::FixedNull => "fixed_null",
        Model::FixedAlt => "fixed_alt",
        Model::RandomNull => "random_null",
        Model::RandomAlt => "random_alt",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelMarginals {
    pub log_m_fixed_null: f64,
    pub log_m_fixed_alt: f64,
    pub log_m_random_null: f64,
    pub log_m_random_alt: f64,
    pub prior_model_probs: ModelProbs,
}

impl ModelMarginals {
    pub fn to_array(&self) -> [f64; 4] {
        [self.log_m_fixed_null, self.log_m_fixed_alt, self.log_m_random_null, self.log_m_random_alt]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelEstimate {
    pub model: PosteriorModel,
    pub summary: PosteriorSummary,
}

/// μ averaged over all four models: the null models contribute a point mass
/// at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnconditionalSummary {
    pub null_probability: f64,
    pub mean: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BmaResult {
    pub marginals: ModelMarginals,
    /// fixed_alt over fixed_null.
    pub bf10_fixed: f64,
    /// random_alt over random_null.
    pub bf10_random: f64,
    /// random_alt over fixed_alt; below 1 favours the fixed model.
    pub bf_rf: f64,
    /// Effect presence over absence, averaged across the ensemble.
    pub bf_inclusion: f64,
    pub log_bf10_fixed: f64,
    pub log_bf10_random: f64,
    pub log_bf_rf: f64,
    pub log_bf_inclusion: f64,
    pub posterior_model_probs: ModelProbs,
    /// fixed_alt, random_alt, and their average (assuming an effect).
    pub mu: Vec<ModelEstimate>,
    /// Present when full averaging was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_unconditional: Option<UnconditionalSummary>,
    /// random_null, random_alt and their average.
    pub tau: Vec<ModelEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmaOptions {
    pub prior_model_probs: ModelProbs,
    /// Also summarise μ averaged over the null models.
    pub full_averaging: bool,
}

/// Everything computed by one Bayesian analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesFit {
    pub result: BmaResult,
    /// fixed_alt, random_alt, averaged.
    pub mu_densities: Vec<PosteriorDensity>,
    /// random_null, random_alt, averaged; empty when both random models
    /// carry no prior mass.
    pub tau_densities: Vec<PosteriorDensity>,
}

impl BayesFit {
    pub fn mu_density(&self, model: PosteriorModel) -> Option<&PosteriorDensity> {
        self.mu_densities.iter().find(|d| d.model == model)
    }

    pub fn tau_density(&self, model: PosteriorModel) -> Option<&PosteriorDensity> {
        self.tau_densities.iter().find(|d| d.model == model)
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// Log marginal likelihoods of all four models.
pub fn model_marginals(
    estimates: &[EffectEstimate],
    priors: &PriorSpec,
    prior_model_probs: &ModelProbs,
) -> Result<ModelMarginals> {
    prior_model_probs.validate()?;
    let engine = Engine::new(estimates, priors)?;
    marginals_with(&engine, prior_model_probs)
}

fn marginals_with(engine: &Engine, probs: &ModelProbs) -> Result<ModelMarginals> {
    Ok(ModelMarginals {
        log_m_fixed_null: engine.log_marginal(Model::FixedNull)?,
        log_m_fixed_alt: engine.log_marginal(Model::FixedAlt)?,
        log_m_random_null: engine.log_marginal(Model::RandomNull)?,
        log_m_random_alt: engine.log_marginal(Model::RandomAlt)?,
        prior_model_probs: *probs,
    })
}

pub(crate) struct Weights {
    pub posterior: ModelProbs,
    pub log_bf_inclusion: f64,
}

pub(crate) fn weights(m: &ModelMarginals) -> Weights {
    let lm = m.to_array();
    let pri = m.prior_model_probs.to_array();
    let lp: Vec<f64> = lm.iter().zip(pri).map(|(l, p)| l + p.ln()).collect();
    let alt = log_sum_exp(lp[1], lp[3]);
    let null = log_sum_exp(lp[0], lp[2]);
    let total = log_sum_exp(alt, null);
    let post: Vec<f64> = lp.iter().map(|l| (l - total).exp()).collect();
    let prior_odds = (pri[1] + pri[3]).ln() - (pri[0] + pri[2]).ln();
    Weights {
        posterior: ModelProbs::from_array([post[0], post[1], post[2], post[3]]),
        log_bf_inclusion: alt - null - prior_odds,
    }
}

/// Share of `a` in `a + b`, falling back to ½ when both vanish.
fn share(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        a / (a + b)
    } else {
        0.5
    }
}

/// Full Bayesian analysis: marginals, Bayes factors, posterior densities and
/// their summaries.
pub fn fit(estimates: &[EffectEstimate], priors: &PriorSpec, options: &BmaOptions) -> Result<BayesFit> {
    options.prior_model_probs.validate()?;
    let engine = Engine::new(estimates, priors)?;
    let marginals = marginals_with(&engine, &options.prior_model_probs)?;
    let w = weights(&marginals);
    let post = w.posterior;
    let comps = Components::new(&engine, marginals.to_array());

    let w_fixed = share(post.fixed_alt, post.random_alt);
    let mu_densities = comps.all(Parameter::Mu, w_fixed)?.to_vec();
    let tau_densities = if options.prior_model_probs.random_null + options.prior_model_probs.random_alt > 0.0 {
        comps.all(Parameter::Tau, share(post.random_null, post.random_alt))?.to_vec()
    } else {
        Vec::new()
    };

    let estimates_of = |ds: &[PosteriorDensity]| {
        ds.iter()
            .map(|d| ModelEstimate { model: d.model, summary: d.summary })
            .collect::<Vec<_>>()
    };
    let mu_unconditional = options.full_averaging.then(|| {
        unconditional(&mu_densities[2], post.fixed_null + post.random_null)
    });

    let lm = marginals.to_array();
    let result = BmaResult {
        bf10_fixed: (lm[1] - lm[0]).exp(),
        bf10_random: (lm[3] - lm[2]).exp(),
        bf_rf: (lm[3] - lm[1]).exp(),
        bf_inclusion: w.log_bf_inclusion.exp(),
        log_bf10_fixed: lm[1] - lm[0],
        log_bf10_random: lm[3] - lm[2],
        log_bf_rf: lm[3] - lm[1],
        log_bf_inclusion: w.log_bf_inclusion,
        posterior_model_probs: post,
        mu: estimates_of(&mu_densities),
        mu_unconditional,
        tau: estimates_of(&tau_densities),
        marginals,
    };
    Ok(BayesFit { result, mu_densities, tau_densities })
}

/// Model-averaged Bayes factors and posterior summaries.
pub fn bma(
    estimates: &[EffectEstimate],
    priors: &PriorSpec,
    prior_model_probs: &ModelProbs,
) -> Result<BmaResult> {
    let opts = BmaOptions { prior_model_probs: *prior_model_probs, full_averaging: false };
    Ok(fit(estimates, priors, &opts)?.result)
}

/// Posterior density of one parameter under one model, with uniform model
/// probabilities for the averaged case.
pub fn posterior_density(
    parameter: Parameter,
    model: PosteriorModel,
    estimates: &[EffectEstimate],
    priors: &PriorSpec,
) -> Result<PosteriorDensity> {
    posterior_density_with(parameter, model, estimates, priors, &ModelProbs::default())
}

pub fn posterior_density_with(
    parameter: Parameter,
    model: PosteriorModel,
    estimates: &[EffectEstimate],
    priors: &PriorSpec,
    prior_model_probs: &ModelProbs,
) -> Result<PosteriorDensity> {
    let valid = match parameter {
        Parameter::Mu => model != PosteriorModel::RandomNull,
        Parameter::Tau => model != PosteriorModel::FixedAlt,
    };
    if !valid {
        return Err(Error::invalid(
            "model",
            format!("{model:?} has no {parameter:?} parameter"),
        ));
    }
    prior_model_probs.validate()?;
    let engine = Engine::new(estimates, priors)?;
    let marginals = marginals_with(&engine, prior_model_probs)?;
    let post = weights(&marginals).posterior;
    let comps = Components::new(&engine, marginals.to_array());
    let w = match parameter {
        Parameter::Mu => share(post.fixed_alt, post.random_alt),
        Parameter::Tau => share(post.random_null, post.random_alt),
    };
    let [a, b, avg] = comps.all(parameter, w)?;
    Ok(match model {
        PosteriorModel::RandomAlt => b,
        PosteriorModel::Averaged => avg,
        _ => a,
    })
}

/// Mixture of a point mass `p0` at zero with `(1 − p0)` times the averaged
/// alternative density.
fn unconditional(alt: &PosteriorDensity, p0: f64) -> UnconditionalSummary {
    if p0 >= 1.0 {
        return UnconditionalSummary {
            null_probability: 1.0,
            mean: 0.0,
            median: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
        };
    }
    let cdf = Cdf::new(&alt.grid, &alt.density);
    let below = (1.0 - p0) * cdf.fraction_below(0.0);
    let quantile = |p: f64| {
        if p <= below {
            cdf.quantile(p / (1.0 - p0)).min(0.0)
        } else if p <= below + p0 {
            0.0
        } else {
            cdf.quantile((p - p0) / (1.0 - p0)).max(0.0)
        }
    };
    UnconditionalSummary {
        null_probability: p0,
        mean: (1.0 - p0) * alt.summary.mean,
        median: quantile(0.5),
        ci_low: quantile(0.025),
        ci_high: quantile(0.975),
    }
}
