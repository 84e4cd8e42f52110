use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::effectsize::EffectEstimate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EggerResult {
    pub intercept: f64,
    pub se_intercept: f64,
    pub slope: f64,
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Egger's regression test for funnel-plot asymmetry: ordinary least squares
/// of `yᵢ/seᵢ` on `1/seᵢ`; the intercept is tested against a t distribution
/// with `k − 2` degrees of freedom.
pub fn egger_test(estimates: &[EffectEstimate]) -> Result<EggerResult> {
    let k = estimates.len();
    if k < 3 {
        return Err(Error::InsufficientStudies(format!(
            "Egger's test needs at least 3 studies, got {k}"
        )));
    }
    let x: Vec<f64> = estimates.iter().map(|e| 1.0 / e.se).collect();
    let z: Vec<f64> = estimates.iter().map(|e| e.y / e.se).collect();
    let kf = k as f64;
    let xbar = x.iter().sum::<f64>() / kf;
    let zbar = z.iter().sum::<f64>() / kf;
    let sxx: f64 = x.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx <= f64::EPSILON * xbar * xbar * kf {
        return Err(Error::Numerical(
            "Egger's test is undefined when every study has the same standard error".into(),
        ));
    }
    let sxz: f64 = x.iter().zip(&z).map(|(x, z)| (x - xbar) * (z - zbar)).sum();
    let slope = sxz / sxx;
    let intercept = zbar - slope * xbar;
    let rss: f64 = x
        .iter()
        .zip(&z)
        .map(|(x, z)| (z - intercept - slope * x).powi(2))
        .sum();
    let df = k - 2;
    let sigma2 = rss / df as f64;
    let se_intercept = (sigma2 * (1.0 / kf + xbar * xbar / sxx)).sqrt();
    let (t, p) = if se_intercept > 0.0 {
        let t = intercept / se_intercept;
        let dist = StudentsT::new(0.0, 1.0, df as f64)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        (t, (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
    } else if intercept == 0.0 {
        (0.0, 1.0)
    } else {
        (intercept.signum() * f64::INFINITY, 0.0)
    };
    Ok(EggerResult {
        intercept,
        se_intercept,
        slope,
        t,
        p,
        df,
    })
}
