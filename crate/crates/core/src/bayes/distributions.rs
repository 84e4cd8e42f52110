//! Prior families for the effect size and the heterogeneity standard
//! deviation. Densities are written out directly; distribution functions and
//! quantiles lean on `statrs`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, Normal, StudentsT};
use statrs::function::erf::{erf, erf_inv};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Tail probability left outside the quadrature domain of the heterogeneity
/// prior, on each side.
pub(crate) const TAU_TAIL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectPrior {
    Normal { mean: f64, sd: f64 },
    StudentT { location: f64, scale: f64, df: f64 },
    Cauchy { location: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeterogeneityPrior {
    InvGamma { shape: f64, scale: f64 },
    HalfNormal { sd: f64 },
    HalfCauchy { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub effect: EffectPrior,
    pub heterogeneity: HeterogeneityPrior,
}

impl Default for PriorSpec {
    /// Tool defaults: a unit normal on the effect and InvGamma(1, 0.15) on τ.
    fn default() -> Self {
        PriorSpec {
            effect: EffectPrior::Normal { mean: 0.0, sd: 1.0 },
            heterogeneity: HeterogeneityPrior::InvGamma { shape: 1.0, scale: 0.15 },
        }
    }
}

impl PriorSpec {
    pub fn new(effect: EffectPrior, heterogeneity: HeterogeneityPrior) -> Result<Self> {
        let spec = PriorSpec { effect, heterogeneity };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.effect.validate("priors.effect")?;
        self.heterogeneity.validate("priors.heterogeneity")
    }
}

fn positive(field: &str, name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            format!("{field}.{name}"),
            format!("must be finite and positive, got {v}"),
        ))
    }
}

fn finite(field: &str, name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{field}.{name}"), format!("must be finite, got {v}")))
    }
}

impl EffectPrior {
    pub fn validate(&self, field: &str) -> Result<()> {
        match *self {
            EffectPrior::Normal { mean, sd } => {
                finite(field, "mean", mean)?;
                positive(field, "sd", sd)
            }
            EffectPrior::StudentT { location, scale, df } => {
                finite(field, "location", location)?;
                positive(field, "scale", scale)?;
                positive(field, "df", df)
            }
            EffectPrior::Cauchy { location, scale } => {
                finite(field, "location", location)?;
                positive(field, "scale", scale)
            }
        }
    }

    pub fn location(&self) -> f64 {
        match *self {
            EffectPrior::Normal { mean, .. } => mean,
            EffectPrior::StudentT { location, .. } | EffectPrior::Cauchy { location, .. } => {
                location
            }
        }
    }

    pub fn scale(&self) -> f64 {
        match *self {
            EffectPrior::Normal { sd, .. } => sd,
            EffectPrior::StudentT { scale, .. } | EffectPrior::Cauchy { scale, .. } => scale,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.location()) / self.scale();
        match *self {
            EffectPrior::Normal { sd, .. } => -LN_SQRT_2PI - sd.ln() - 0.5 * z * z,
            EffectPrior::StudentT { scale, df, .. } => {
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
            }
            EffectPrior::Cauchy { scale, .. } => -(PI * scale).ln() - (z * z).ln_1p(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            EffectPrior::Normal { mean, sd } => Normal::new(mean, sd).map_or(f64::NAN, |d| d.cdf(x)),
            EffectPrior::StudentT { location, scale, df } => {
                StudentsT::new(location, scale, df).map_or(f64::NAN, |d| d.cdf(x))
            }
            EffectPrior::Cauchy { location, scale } => {
                0.5 + ((x - location) / scale).atan() / PI
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            EffectPrior::Normal { mean, sd } => {
                Normal::new(mean, sd).map_or(f64::NAN, |d| d.inverse_cdf(p))
            }
            EffectPrior::StudentT { location, scale, df } => {
                StudentsT::new(location, scale, df).map_or(f64::NAN, |d| d.inverse_cdf(p))
            }
            EffectPrior::Cauchy { location, scale } => location + scale * (PI * (p - 0.5)).tan(),
        }
    }

    /// Quadrature range: ±10 sd for the normal, ±12 scales for the heavy
    /// tailed families.
    pub fn domain(&self) -> (f64, f64) {
        let width = match self {
            EffectPrior::Normal { .. } => 10.0,
            _ => 12.0,
        } * self.scale();
        (self.location() - width, self.location() + width)
    }
}

impl HeterogeneityPrior {
    pub fn validate(&self, field: &str) -> Result<()> {
        match *self {
            HeterogeneityPrior::InvGamma { shape, scale } => {
                positive(field, "shape", shape)?;
                positive(field, "scale", scale)
            }
            HeterogeneityPrior::HalfNormal { sd } => positive(field, "sd", sd),
            HeterogeneityPrior::HalfCauchy { scale } => positive(field, "scale", scale),
        }
    }

    /// Log density on τ > 0; −∞ elsewhere.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            HeterogeneityPrior::InvGamma { shape, scale } => {
                shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
            }
            HeterogeneityPrior::HalfNormal { sd } => {
                let z = x / sd;
                LN_2 - LN_SQRT_2PI - sd.ln() - 0.5 * z * z
            }
            HeterogeneityPrior::HalfCauchy { scale } => {
                let z = x / scale;
                LN_2 - (PI * scale).ln() - (z * z).ln_1p()
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        match *self {
            HeterogeneityPrior::InvGamma { shape, scale } => gamma_ur(shape, scale / x),
            HeterogeneityPrior::HalfNormal { sd } => erf(x / (sd * std::f64::consts::SQRT_2)),
            HeterogeneityPrior::HalfCauchy { scale } => 2.0 / PI * (x / scale).atan(),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile_split(p, 1.0 - p)
    }

    /// Quantile given both `p` and `1 − p`, so far upper tails keep their
    /// precision.
    fn quantile_split(&self, p: f64, q: f64) -> f64 {
        match *self {
            HeterogeneityPrior::InvGamma { shape, scale } => {
                // 1/X with X ~ Gamma(shape, rate = scale)
                Gamma::new(shape, scale).map_or(f64::NAN, |g| 1.0 / g.inverse_cdf(q))
            }
            HeterogeneityPrior::HalfNormal { sd } => {
                sd * std::f64::consts::SQRT_2 * erf_inv(p)
            }
            HeterogeneityPrior::HalfCauchy { scale } => scale / (0.5 * PI * q).tan(),
        }
    }

    /// Prior mean of τ, infinite where it does not exist.
    pub fn mean(&self) -> f64 {
        match *self {
            HeterogeneityPrior::InvGamma { shape, scale } => {
                if shape > 1.0 {
                    scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            HeterogeneityPrior::HalfNormal { sd } => sd * (2.0 / PI).sqrt(),
            HeterogeneityPrior::HalfCauchy { .. } => f64::INFINITY,
        }
    }

    /// Quadrature range on τ: the central `1 − 2·1e-6` prior mass.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.quantile_split(TAU_TAIL, 1.0 - TAU_TAIL),
            self.quantile_split(1.0 - TAU_TAIL, TAU_TAIL),
        )
    }
}

/// Splits `name(a,b,…)` into the lowercased name and its numeric arguments.
fn parse_call(s: &str) -> Result<(String, Vec<f64>)> {
    let bad = || {
        Error::invalid(
            "prior",
            format!("expected `family(arg,…)`, got `{s}`"),
        )
    };
    let s = s.trim();
    let open = s.find('(').ok_or_else(bad)?;
    let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
    let name = s[..open].trim().to_lowercase().replace(['-', ' '], "_");
    let args = inner
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid("prior", format!("`{}` is not a number", a.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((name, args))
}

fn arity(name: &str, args: &[f64], n: usize) -> Result<()> {
    if args.len() == n {
        Ok(())
    } else {
        Err(Error::invalid(
            "prior",
            format!("{name} takes {n} arguments, got {}", args.len()),
        ))
    }
}

/// `normal(mean,sd)`, `t(location,scale,df)` or `cauchy(location,scale)`.
impl std::str::FromStr for EffectPrior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, a) = parse_call(s)?;
        let prior = match name.as_str() {
            "normal" | "norm" => {
                arity(&name, &a, 2)?;
                EffectPrior::Normal { mean: a[0], sd: a[1] }
            }
            "t" | "student_t" | "studentt" => {
                arity(&name, &a, 3)?;
                EffectPrior::StudentT { location: a[0], scale: a[1], df: a[2] }
            }
            "cauchy" => {
                arity(&name, &a, 2)?;
                EffectPrior::Cauchy { location: a[0], scale: a[1] }
            }
            other => {
                return Err(Error::invalid(
                    "prior",
                    format!("unknown effect prior `{other}` (normal, t, cauchy)"),
                ))
            }
        };
        prior.validate("prior")?;
        Ok(prior)
    }
}

/// `invgamma(shape,scale)`, `halfnormal(sd)` or `halfcauchy(scale)`.
impl std::str::FromStr for HeterogeneityPrior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, a) = parse_call(s)?;
        let prior = match name.as_str() {
            "invgamma" | "inv_gamma" | "inverse_gamma" => {
                arity(&name, &a, 2)?;
                HeterogeneityPrior::InvGamma { shape: a[0], scale: a[1] }
            }
            "halfnormal" | "half_normal" => {
                arity(&name, &a, 1)?;
                HeterogeneityPrior::HalfNormal { sd: a[0] }
            }
            "halfcauchy" | "half_cauchy" => {
                arity(&name, &a, 1)?;
                HeterogeneityPrior::HalfCauchy { scale: a[0] }
            }
            other => {
                return Err(Error::invalid(
                    "prior",
                    format!("unknown heterogeneity prior `{other}` (invgamma, halfnormal, halfcauchy)"),
                ))
            }
        };
        prior.validate("prior")?;
        Ok(prior)
    }
}
