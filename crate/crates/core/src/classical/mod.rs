//! Frequentist pooling: inverse-variance and Mantel–Haenszel fixed effect,
//! DerSimonian–Laird and REML random effects, heterogeneity statistics,
//! Egger's regression test and back-transformation to the natural scale.
//!
//! All intervals are 95% Wald intervals; no Knapp–Hartung adjustment.

mod egger;
mod mh;
mod reml;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::effectsize::{EffectEstimate, EffectScale};
use crate::error::{Error, Result};

pub use egger::{egger_test, EggerResult};
pub use mh::{mantel_haenszel, MhMeasure, MhResult};
pub use reml::{reml_tau2, reml_tau2_with, restricted_log_likelihood, RemlOptions};

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Inverse-variance fixed effect.
    #[serde(rename = "fixed")]
    FixedIv,
    #[serde(rename = "mh")]
    FixedMh,
    #[serde(rename = "dl")]
    RandomDl,
    #[serde(rename = "reml")]
    RandomReml,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::FixedIv => "Fixed effect (inverse variance)",
            Method::FixedMh => "Fixed effect (Mantel-Haenszel)",
            Method::RandomDl => "Random effects (DerSimonian-Laird)",
            Method::RandomReml => "Random effects (REML)",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Method::RandomDl | Method::RandomReml)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" | "fe" | "iv" => Ok(Method::FixedIv),
            "mh" => Ok(Method::FixedMh),
            "dl" | "random" => Ok(Method::RandomDl),
            "reml" => Ok(Method::RandomReml),
            other => Err(Error::invalid(
                "method",
                format!("unknown method `{other}` (fixed, mh, dl, reml)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledResult {
    pub method: Method,
    pub y: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub z: f64,
    pub p: f64,
    pub k: usize,
    /// Percentage weight of each input study, in input order.
    pub weights: Vec<f64>,
    /// Between-study variance used for the weights (0 for fixed effect).
    pub tau2: f64,
}

impl PooledResult {
    pub(crate) fn from_estimate(method: Method, y: f64, se: f64, raw_weights: &[f64], tau2: f64) -> Self {
        let z = y / se;
        let total: f64 = raw_weights.iter().sum();
        PooledResult {
            method,
            y,
            se,
            ci_low: y - Z_975 * se,
            ci_high: y + Z_975 * se,
            z,
            p: two_sided_p(z),
            k: raw_weights.len(),
            weights: raw_weights.iter().map(|w| 100.0 * w / total).collect(),
            tau2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeterogeneityStats {
    pub q: f64,
    pub df: usize,
    pub p_q: f64,
    /// DerSimonian–Laird moment estimate on the analysis scale squared.
    pub tau2: f64,
    pub i2: f64,
    pub h2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformedResult {
    pub scale: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// `2·(1 − Φ(|z|))`, evaluated through `erfc` to keep precision in the tail.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

fn check_nonempty(estimates: &[EffectEstimate]) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::InsufficientStudies("no studies to pool".into()));
    }
    Ok(())
}

fn pool_with_weights(estimates: &[EffectEstimate], weights: &[f64]) -> (f64, f64) {
    let sw: f64 = weights.iter().sum();
    let y = estimates.iter().zip(weights).map(|(e, w)| w * e.y).sum::<f64>() / sw;
    (y, 1.0 / sw.sqrt())
}

pub fn fixed_effect_iv(estimates: &[EffectEstimate]) -> Result<PooledResult> {
    check_nonempty(estimates)?;
    let w: Vec<f64> = estimates.iter().map(EffectEstimate::weight_fe).collect();
    let (y, se) = pool_with_weights(estimates, &w);
    Ok(PooledResult::from_estimate(Method::FixedIv, y, se, &w, 0.0))
}

/// Inverse-variance pooling with weights `1/(se² + τ²)`. With `tau2 == 0`
/// the result is bitwise identical to [`fixed_effect_iv`] apart from the
/// method tag.
pub fn random_effects(estimates: &[EffectEstimate], tau2: f64) -> Result<PooledResult> {
    check_nonempty(estimates)?;
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::invalid("tau2", format!("must be a finite non-negative number, got {tau2}")));
    }
    let w: Vec<f64> = if tau2 == 0.0 {
        estimates.iter().map(EffectEstimate::weight_fe).collect()
    } else {
        estimates.iter().map(|e| 1.0 / (e.variance() + tau2)).collect()
    };
    let (y, se) = pool_with_weights(estimates, &w);
    Ok(PooledResult::from_estimate(Method::RandomDl, y, se, &w, tau2))
}

pub fn heterogeneity(estimates: &[EffectEstimate]) -> Result<HeterogeneityStats> {
    check_nonempty(estimates)?;
    let k = estimates.len();
    if k == 1 {
        return Ok(HeterogeneityStats {
            q: 0.0,
            df: 0,
            p_q: 1.0,
            tau2: 0.0,
            i2: 0.0,
            h2: 1.0,
        });
    }
    let w: Vec<f64> = estimates.iter().map(EffectEstimate::weight_fe).collect();
    let (mean, _) = pool_with_weights(estimates, &w);
    let q: f64 = estimates
        .iter()
        .zip(&w)
        .map(|(e, w)| w * (e.y - mean).powi(2))
        .sum();
    let df = k - 1;
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|w| w * w).sum();
    let c = sw - sw2 / sw;
    let tau2 = ((q - df as f64) / c).max(0.0);
    let i2 = if q > 0.0 {
        ((q - df as f64) / q).max(0.0) * 100.0
    } else {
        0.0
    };
    Ok(HeterogeneityStats {
        q,
        df,
        p_q: if q > 0.0 { gamma_ur(df as f64 / 2.0, q / 2.0) } else { 1.0 },
        tau2,
        i2,
        h2: (q / df as f64).max(1.0),
    })
}

/// Convenience dispatch over the estimate-based methods. Mantel–Haenszel
/// needs raw tables and is handled by [`mantel_haenszel`].
pub fn pool(estimates: &[EffectEstimate], method: Method) -> Result<PooledResult> {
    match method {
        Method::FixedIv => fixed_effect_iv(estimates),
        Method::RandomDl => {
            let tau2 = heterogeneity(estimates)?.tau2;
            random_effects(estimates, tau2)
        }
        Method::RandomReml => {
            let tau2 = if estimates.len() < 2 { 0.0 } else { reml_tau2(estimates)? };
            let mut r = random_effects(estimates, tau2)?;
            r.method = Method::RandomReml;
            Ok(r)
        }
        Method::FixedMh => Err(Error::invalid(
            "method",
            "Mantel-Haenszel pooling needs dichotomous counts",
        )),
    }
}

/// Exponentiates log-scale results; identity on additive scales.
pub fn transform(result: &PooledResult, scale: EffectScale) -> TransformedResult {
    match scale.natural_label() {
        Some(label) => TransformedResult {
            scale: label.to_string(),
            estimate: result.y.exp(),
            ci_low: result.ci_low.exp(),
            ci_high: result.ci_high.exp(),
        },
        None => TransformedResult {
            scale: scale.label().to_string(),
            estimate: result.y,
            ci_low: result.ci_low,
            ci_high: result.ci_high,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(y: f64, se: f64) -> EffectEstimate {
        EffectEstimate::new("s", y, se, EffectScale::LogRiskRatio)
    }

    #[test]
    fn fixed_singleton_and_pair() {
        let r = fixed_effect_iv(&[est(0.5, 0.2)]).unwrap();
        assert_eq!((r.y, r.se), (0.5, 0.2));
        assert_eq!(r.weights, vec![100.0]);

        let r = fixed_effect_iv(&[est(0.0, 1.0), est(2.0, 1.0)]).unwrap();
        assert_eq!(r.y, 1.0);
        assert!((r.se - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(fixed_effect_iv(&[]).is_err());
    }

    #[test]
    fn heterogeneity_hand_values() {
        let h = heterogeneity(&[est(0.0, 1.0), est(2.0, 1.0)]).unwrap();
        assert_eq!(h.q, 2.0);
        assert_eq!(h.df, 1);
        assert_eq!(h.tau2, 1.0);
        assert!((h.i2 - 50.0).abs() < 1e-12);

        let h = heterogeneity(&[est(0.3, 0.5), est(0.3, 0.2), est(0.3, 1.0)]).unwrap();
        assert_eq!((h.q, h.tau2, h.i2), (0.0, 0.0, 0.0));
        assert_eq!(h.p_q, 1.0);

        // Q < df truncates τ² at zero
        let h = heterogeneity(&[est(0.0, 1.0), est(0.1, 1.0), est(-0.1, 1.0)]).unwrap();
        assert!(h.q < 2.0);
        assert_eq!(h.tau2, 0.0);
        assert_eq!(h.i2, 0.0);

        let h = heterogeneity(&[est(0.4, 0.3)]).unwrap();
        assert_eq!((h.q, h.df, h.p_q, h.tau2), (0.0, 0, 1.0, 0.0));
    }

    #[test]
    fn random_effects_limits() {
        let es = [est(-0.3, 0.1), est(0.2, 0.4), est(0.9, 0.8), est(0.1, 0.25)];
        let fixed = fixed_effect_iv(&es).unwrap();
        let re0 = random_effects(&es, 0.0).unwrap();
        assert_eq!(fixed.y.to_bits(), re0.y.to_bits());
        assert_eq!(fixed.se.to_bits(), re0.se.to_bits());

        let mean = es.iter().map(|e| e.y).sum::<f64>() / es.len() as f64;
        let wide = random_effects(&es, 1e6).unwrap();
        assert!((wide.y - mean).abs() < 1e-3);

        let re = random_effects(&es, 0.05).unwrap();
        assert!(re.se >= fixed.se);
    }

    #[test]
    fn transform_matches_reported_risk_ratio() {
        let r = PooledResult {
            method: Method::FixedIv,
            y: -0.784,
            se: 0.216,
            ci_low: -1.207,
            ci_high: -0.361,
            z: -3.63,
            p: 0.0003,
            k: 4,
            weights: vec![25.0; 4],
            tau2: 0.0,
        };
        let t = transform(&r, EffectScale::LogRiskRatio);
        assert!((t.estimate - 0.4566).abs() < 1e-4);
        assert!((t.ci_low - 0.2991).abs() < 1e-4);
        assert!((t.ci_high - 0.6970).abs() < 1e-4);
        assert_eq!(t.scale, "RR");
        let zero = PooledResult { y: 0.0, ..r.clone() };
        assert_eq!(transform(&zero, EffectScale::LogOddsRatio).estimate, 1.0);
        let rd = transform(&r, EffectScale::RiskDifference);
        assert_eq!((rd.estimate, rd.ci_low, rd.ci_high), (r.y, r.ci_low, r.ci_high));
    }

    fn estimates() -> impl Strategy<Value = Vec<EffectEstimate>> {
        prop::collection::vec((-3.0..3.0f64, 0.05..2.0f64), 1..20)
            .prop_map(|v| v.into_iter().map(|(y, se)| est(y, se)).collect())
    }

    proptest! {
        #[test]
        fn pooled_properties(es in estimates(), shift in 0usize..20) {
            let r = fixed_effect_iv(&es).unwrap();
            let lo = es.iter().map(|e| e.y).fold(f64::INFINITY, f64::min);
            let hi = es.iter().map(|e| e.y).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.y >= lo - 1e-12 && r.y <= hi + 1e-12);
            prop_assert!((r.weights.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            prop_assert!(r.ci_low < r.y && r.y < r.ci_high);
            prop_assert!((0.0..=1.0).contains(&r.p));
            prop_assert!(r.z == 0.0 || r.z.signum() == r.y.signum());

            let mut rotated = es.clone();
            rotated.rotate_left(shift % es.len());
            let r2 = fixed_effect_iv(&rotated).unwrap();
            prop_assert!((r.y - r2.y).abs() < 1e-12);

            // Q by formula vs brute-force double sum over pairs
            if es.len() >= 2 {
                let h = heterogeneity(&es).unwrap();
                let w: Vec<f64> = es.iter().map(|e| 1.0 / (e.se * e.se)).collect();
                let sw: f64 = w.iter().sum();
                let mut brute = 0.0;
                for i in 0..es.len() {
                    for j in 0..es.len() {
                        brute += w[i] * w[j] * (es[i].y - es[j].y).powi(2);
                    }
                }
                brute /= 2.0 * sw;
                prop_assert!((h.q - brute).abs() <= 1e-12 * brute + 1e-14);
                prop_assert!(h.i2 >= 0.0 && h.i2 <= 100.0);
                prop_assert!(h.h2 >= 1.0);
            }

            let t = transform(&r, EffectScale::LogRiskRatio);
            prop_assert!(t.ci_low < t.estimate && t.estimate < t.ci_high);
        }
    }
}
