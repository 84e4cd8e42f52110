//! Marginal likelihoods of the four-model ensemble.
//!
//! Given `(yᵢ, seᵢ)` the fixed model has `yᵢ ~ N(μ, seᵢ²)` and the random model
//! `yᵢ ~ N(μ, seᵢ² + τ²)`; null models fix `μ = 0`. For fixed τ the
//! log-likelihood is an exact quadratic in μ, which the integrators exploit.

use serde::{Deserialize, Serialize};

use super::distributions::PriorSpec;
use super::quadrature::{clean_breakpoints, integrate_log, linspace};
use crate::effectsize::EffectEstimate;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) const TOL_1D: f64 = 1e-11;
pub(crate) const TOL_INNER: f64 = 1e-11;
pub(crate) const TOL_OUTER: f64 = 1e-9;
pub(crate) const MAX_INTERVALS: usize = 4000;
const TAU_PIECES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    FixedNull,
    FixedAlt,
    RandomNull,
    RandomAlt,
}

impl Model {
    pub const ALL: [Model; 4] = [Model::FixedNull, Model::FixedAlt, Model::RandomNull, Model::RandomAlt];

    pub fn has_effect(self) -> bool {
        matches!(self, Model::FixedAlt | Model::RandomAlt)
    }

    pub fn is_random(self) -> bool {
        matches!(self, Model::RandomNull | Model::RandomAlt)
    }

    pub fn label(self) -> &'static str {
        match self {
            Model::FixedNull => "Fixed effects, H0",
            Model::FixedAlt => "Fixed effects, H1",
            Model::RandomNull => "Random effects, H0",
            Model::RandomAlt => "Random effects, H1",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_null" => Ok(Model::FixedNull),
            "fixed_alt" => Ok(Model::FixedAlt),
            "random_null" => Ok(Model::RandomNull),
            "random_alt" => Ok(Model::RandomAlt),
            other => Err(Error::invalid("model", format!("unknown model `{other}`"))),
        }
    }
}

/// The likelihood for fixed τ² as `c − ½·w·(μ − centre)²`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Profile {
    pub w: f64,
    pub centre: f64,
    pub c: f64,
}

impl Profile {
    pub fn loglik(&self, mu: f64) -> f64 {
        self.c + self.kernel(mu)
    }

    /// The μ-dependent part, `−½·w·(μ − centre)²`.
    pub fn kernel(&self, mu: f64) -> f64 {
        let d = mu - self.centre;
        -0.5 * self.w * d * d
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Data {
    y: Vec<f64>,
    v: Vec<f64>,
}

impl Data {
    pub fn new(estimates: &[EffectEstimate]) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::InsufficientStudies(
                "Bayesian meta-analysis needs at least one study".into(),
            ));
        }
        for e in estimates {
            if !(e.y.is_finite() && e.se.is_finite() && e.se > 0.0) {
                return Err(Error::invalid(
                    format!("estimates.{}", e.label),
                    format!("needs finite y and positive se, got y={} se={}", e.y, e.se),
                ));
            }
        }
        Ok(Data {
            y: estimates.iter().map(|e| e.y).collect(),
            v: estimates.iter().map(|e| e.se * e.se).collect(),
        })
    }

    pub fn loglik(&self, mu: f64, tau2: f64) -> f64 {
        self.y
            .iter()
            .zip(&self.v)
            .map(|(y, v)| {
                let s = v + tau2;
                -0.5 * (LN_2PI + s.ln() + (y - mu) * (y - mu) / s)
            })
            .sum()
    }

    pub fn profile(&self, tau2: f64) -> Profile {
        let mut w = 0.0;
        let mut wy = 0.0;
        let mut norm = 0.0;
        for (y, v) in self.y.iter().zip(&self.v) {
            let s = v + tau2;
            w += 1.0 / s;
            wy += y / s;
            norm -= 0.5 * (LN_2PI + s.ln());
        }
        let centre = wy / w;
        let rss: f64 = self
            .y
            .iter()
            .zip(&self.v)
            .map(|(y, v)| (y - centre) * (y - centre) / (v + tau2))
            .sum();
        Profile { w, centre, c: norm - 0.5 * rss }
    }
}

/// Holds the data and priors together with the integration domains.
#[derive(Debug, Clone)]
pub(crate) struct Engine {
    pub data: Data,
    pub priors: PriorSpec,
    /// Range of u = ln τ.
    pub u_range: (f64, f64),
}

impl Engine {
    pub fn new(estimates: &[EffectEstimate], priors: &PriorSpec) -> Result<Self> {
        priors.validate()?;
        let data = Data::new(estimates)?;
        let (lo, hi) = priors.heterogeneity.domain();
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Numerical(format!(
                "heterogeneity prior quantiles give an empty domain ({lo}, {hi})"
            )));
        }
        Ok(Engine { data, priors: *priors, u_range: (lo.ln(), hi.ln()) })
    }

    /// μ range covering both the prior and the likelihood.
    pub fn mu_range(&self, p: &Profile) -> (f64, f64) {
        let (a, b) = self.priors.effect.domain();
        let half = 12.0 / p.w.sqrt();
        (a.min(p.centre - half), b.max(p.centre + half))
    }

    pub fn mu_breakpoints(&self, p: &Profile) -> Vec<f64> {
        let (lo, hi) = self.mu_range(p);
        let sd = 1.0 / p.w.sqrt();
        let (loc, scale) = (self.priors.effect.location(), self.priors.effect.scale());
        let mut pts: Vec<f64> = [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|c| p.centre + c * sd)
            .collect();
        pts.extend([-4.0, -1.0, 0.0, 1.0, 4.0].iter().map(|c| loc + c * scale));
        clean_breakpoints(pts, lo, hi)
    }

    pub fn u_breakpoints(&self) -> Vec<f64> {
        linspace(self.u_range.0, self.u_range.1, TAU_PIECES)
    }

    /// ln ∫ π(μ) exp(profile(μ)) dμ.
    pub fn ln_mu_integral(&self, p: &Profile, tol: f64) -> Result<f64> {
        let prior = self.priors.effect;
        let bp = self.mu_breakpoints(p);
        Ok(integrate_log(|mu| prior.ln_pdf(mu) + p.kernel(mu), &bp, tol, MAX_INTERVALS)?.log_value)
    }

    /// Log integrand over u = ln τ, including the Jacobian τ.
    pub fn ln_tau_weight(&self, u: f64) -> f64 {
        self.priors.heterogeneity.ln_pdf(u.exp()) + u
    }

    /// ln p(y | τ) under the random alternative, as a function of u = ln τ.
    pub fn ln_random_alt_given_u(&self, u: f64, tol: f64) -> Result<f64> {
        let p = self.data.profile((2.0 * u).exp());
        Ok(p.c + self.ln_mu_integral(&p, tol)?)
    }

    /// Integrates `h(u)` that may itself fail, forwarding the first inner
    /// error.
    pub fn integrate_u(
        &self,
        mut h: impl FnMut(f64) -> Result<f64>,
        tol: f64,
    ) -> Result<f64> {
        let mut inner: Option<Error> = None;
        let r = integrate_log(
            |u| match h(u) {
                Ok(v) => v,
                Err(e) => {
                    inner.get_or_insert(e);
                    f64::NAN
                }
            },
            &self.u_breakpoints(),
            tol,
            MAX_INTERVALS,
        );
        match inner {
            Some(e) => Err(e),
            None => Ok(r?.log_value),
        }
    }

    pub fn log_marginal(&self, model: Model) -> Result<f64> {
        match model {
            Model::FixedNull => Ok(self.data.loglik(0.0, 0.0)),
            Model::FixedAlt => {
                let p = self.data.profile(0.0);
                Ok(p.c + self.ln_mu_integral(&p, TOL_1D)?)
            }
            Model::RandomNull => self.integrate_u(
                |u| Ok(self.ln_tau_weight(u) + self.data.loglik(0.0, (2.0 * u).exp())),
                TOL_1D,
            ),
            Model::RandomAlt => self.integrate_u(
                |u| Ok(self.ln_tau_weight(u) + self.ln_random_alt_given_u(u, TOL_INNER)?),
                TOL_OUTER,
            ),
        }
    }
}

/// Log marginal likelihood of one model of the ensemble.
pub fn log_marginal(model: Model, estimates: &[EffectEstimate], priors: &PriorSpec) -> Result<f64> {
    Engine::new(estimates, priors)?.log_marginal(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::distributions::{EffectPrior, HeterogeneityPrior};
    use crate::effectsize::EffectScale;
    use proptest::prelude::*;

    fn est(y: f64, se: f64) -> EffectEstimate {
        EffectEstimate::new("s", y, se, EffectScale::LogRiskRatio)
    }

    fn normal_priors(mean: f64, sd: f64) -> PriorSpec {
        PriorSpec {
            effect: EffectPrior::Normal { mean, sd },
            ..PriorSpec::default()
        }
    }

    fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
        -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
    }

    fn informed() -> PriorSpec {
        PriorSpec {
            effect: EffectPrior::StudentT { location: 0.0, scale: 0.58, df: 5.0 },
            heterogeneity: HeterogeneityPrior::InvGamma { shape: 1.74, scale: 0.27 },
        }
    }

    #[test]
    fn fixed_null_closed_form() {
        let l = log_marginal(Model::FixedNull, &[est(0.0, 1.0)], &PriorSpec::default()).unwrap();
        assert!((l - 0.398_942_3_f64.ln()).abs() < 1e-7);
        assert!((l + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn profile_matches_direct_likelihood() {
        let d = Data::new(&[est(0.3, 0.2), est(-0.1, 0.5), est(0.8, 0.3)]).unwrap();
        for tau2 in [0.0, 0.01, 0.7] {
            let p = d.profile(tau2);
            for mu in [-1.0, 0.0, 0.25, 2.0] {
                assert!((p.loglik(mu) - d.loglik(mu, tau2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_single_study() {
        for (y, se, m0, s0) in [(0.4, 0.3, 0.0, 1.0), (-2.0, 0.05, 0.5, 0.2), (3.0, 2.0, 0.0, 0.5)] {
            let l = log_marginal(Model::FixedAlt, &[est(y, se)], &normal_priors(m0, s0)).unwrap();
            let exact = ln_normal(y, m0, se * se + s0 * s0);
            assert!((l - exact).abs() < 1e-8, "{l} vs {exact}");
        }
    }

    // k-study conjugate form: y ~ N(m0·1, V + s0²·11ᵀ)
    fn conjugate_k(es: &[EffectEstimate], m0: f64, s0: f64) -> f64 {
        let d = Data::new(es).unwrap();
        let p = d.profile(0.0);
        // ∫ N(μ; m0, s0²) exp(c − ½w(μ−ȳ)²) dμ
        let var = 1.0 / p.w + s0 * s0;
        p.c + 0.5 * (LN_2PI - p.w.ln()) + ln_normal(p.centre, m0, var)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn conjugate_random_sets(
            data in prop::collection::vec((-1.5f64..1.5, 0.05f64..1.5), 1..8),
            m0 in -0.5f64..0.5,
            s0 in 0.1f64..2.0,
        ) {
            let es: Vec<_> = data.iter().map(|&(y, s)| est(y, s)).collect();
            let l = log_marginal(Model::FixedAlt, &es, &normal_priors(m0, s0)).unwrap();
            let exact = conjugate_k(&es, m0, s0);
            prop_assert!((l - exact).abs() < 1e-8, "{} vs {}", l, exact);
        }
    }

    #[test]
    fn tiny_heterogeneity_reduces_to_fixed() {
        let es = [est(-0.9, 0.45), est(-0.5, 0.6), est(-1.2, 0.8)];
        let pri = PriorSpec {
            heterogeneity: HeterogeneityPrior::InvGamma { shape: 1.74, scale: 1e-4 },
            ..informed()
        };
        let fa = log_marginal(Model::FixedAlt, &es, &pri).unwrap();
        let ra = log_marginal(Model::RandomAlt, &es, &pri).unwrap();
        assert!((ra - fa).exp() - 1.0 < 0.01 && 1.0 - (ra - fa).exp() < 0.01, "{}", (ra - fa).exp());
        let fnull = log_marginal(Model::FixedNull, &es, &pri).unwrap();
        let rn = log_marginal(Model::RandomNull, &es, &pri).unwrap();
        assert!(((rn - fnull).exp() - 1.0).abs() < 0.01);
    }

    #[test]
    fn random_null_against_brute_force() {
        // midpoint rule on a fine τ grid
        let es = [est(0.2, 0.3), est(0.9, 0.25), est(-0.4, 0.4)];
        let pri = informed();
        let d = Data::new(&es).unwrap();
        let (lo, hi) = pri.heterogeneity.domain();
        let (ulo, uhi) = (lo.ln(), hi.ln());
        let n = 200_000;
        let h = (uhi - ulo) / n as f64;
        let sum: f64 = (0..n)
            .map(|i| {
                let u = ulo + (i as f64 + 0.5) * h;
                (pri.heterogeneity.ln_pdf(u.exp()) + u + d.loglik(0.0, (2.0 * u).exp())).exp()
            })
            .sum();
        let brute = (sum * h).ln();
        let l = log_marginal(Model::RandomNull, &es, &pri).unwrap();
        assert!((l - brute).abs() < 1e-7, "{l} vs {brute}");
    }

    #[test]
    fn data_far_outside_prior_range() {
        // the likelihood sits ~20 prior sds away; the domain must follow it
        let es = [est(20.0, 0.1)];
        let l = log_marginal(Model::FixedAlt, &es, &normal_priors(0.0, 1.0)).unwrap();
        assert!((l - ln_normal(20.0, 0.0, 1.01)).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(log_marginal(Model::FixedAlt, &[], &PriorSpec::default()).is_err());
        assert!(log_marginal(Model::FixedAlt, &[est(0.1, 0.0)], &PriorSpec::default()).is_err());
        let bad = normal_priors(0.0, -1.0);
        assert!(log_marginal(Model::FixedAlt, &[est(0.1, 0.2)], &bad).is_err());
    }
}
