use crate::effectsize::EffectEstimate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RemlOptions {
    /// Stop when successive iterates differ by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Upper bound of the search interval; `None` picks one from the data.
    pub tau2_max: Option<f64>,
}

impl Default for RemlOptions {
    fn default() -> Self {
        RemlOptions {
            tol: 1e-10,
            max_iter: 500,
            tau2_max: None,
        }
    }
}

/// `ℓ_R(τ²) = −½Σln(vᵢ+τ²) − ½ln Σwᵢ − ½Σwᵢ(yᵢ−μ̂)²` with `wᵢ = 1/(vᵢ+τ²)`.
pub fn restricted_log_likelihood(estimates: &[EffectEstimate], tau2: f64) -> f64 {
    let w: Vec<f64> = estimates.iter().map(|e| 1.0 / (e.variance() + tau2)).collect();
    let sw: f64 = w.iter().sum();
    let mu = estimates.iter().zip(&w).map(|(e, w)| w * e.y).sum::<f64>() / sw;
    let rss: f64 = estimates.iter().zip(&w).map(|(e, w)| w * (e.y - mu).powi(2)).sum();
    let logdet: f64 = w.iter().map(|w| -w.ln()).sum();
    -0.5 * (logdet + sw.ln() + rss)
}

pub fn reml_tau2(estimates: &[EffectEstimate]) -> Result<f64> {
    reml_tau2_with(estimates, RemlOptions::default())
}

/// REML estimate of τ² by Fisher scoring from the DerSimonian–Laird value,
/// projected onto `[0, tau2_max]`.
pub fn reml_tau2_with(estimates: &[EffectEstimate], opts: RemlOptions) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(Error::InsufficientStudies("REML needs at least two studies".into()));
    }
    let ys: Vec<f64> = estimates.iter().map(|e| e.y).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let spread = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
    let max_v = estimates.iter().map(EffectEstimate::variance).fold(0.0, f64::max);
    let upper = opts.tau2_max.unwrap_or(100.0 * (spread + max_v).max(1.0));

    let mut tau2 = super::heterogeneity(estimates)?.tau2.min(upper);
    for _ in 0..opts.max_iter {
        let w: Vec<f64> = estimates.iter().map(|e| 1.0 / (e.variance() + tau2)).collect();
        let sw: f64 = w.iter().sum();
        let sw2: f64 = w.iter().map(|w| w * w).sum();
        let sw3: f64 = w.iter().map(|w| w * w * w).sum();
        let mu = estimates.iter().zip(&w).map(|(e, w)| w * e.y).sum::<f64>() / sw;
        let ypp_y: f64 = estimates
            .iter()
            .zip(&w)
            .map(|(e, w)| (w * (e.y - mu)).powi(2))
            .sum();
        let tr_p = sw - sw2 / sw;
        let tr_pp = sw2 - 2.0 * sw3 / sw + (sw2 / sw).powi(2);
        let next = (tau2 + (ypp_y - tr_p) / tr_pp).clamp(0.0, upper);
        if !next.is_finite() {
            return Err(Error::Numerical(format!("REML iteration diverged at τ² = {tau2}")));
        }
        let delta = (next - tau2).abs();
        tau2 = next;
        if delta < opts.tol {
            return Ok(tau2);
        }
    }
    Err(Error::Numerical(format!(
        "REML did not converge in {} iterations (last τ² = {tau2})",
        opts.max_iter
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effectsize::EffectScale;

    fn est(y: f64, se: f64) -> EffectEstimate {
        EffectEstimate::new("s", y, se, EffectScale::LogOddsRatio)
    }

    #[test]
    fn identical_estimates_give_zero() {
        assert_eq!(reml_tau2(&[est(0.2, 0.3), est(0.2, 0.5), est(0.2, 0.1)]).unwrap(), 0.0);
    }

    #[test]
    fn equal_variances_closed_form() {
        // with equal sampling variances REML is max(0, s² − v)
        let es = [est(0.0, 1.0), est(2.0, 1.0)];
        assert!((reml_tau2(&es).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn permutation_invariant() {
        let es = vec![est(-0.4, 0.2), est(0.5, 0.35), est(1.2, 0.5), est(0.1, 0.15), est(0.9, 0.3)];
        let a = reml_tau2(&es).unwrap();
        let mut rev = es.clone();
        rev.reverse();
        assert!((a - reml_tau2(&rev).unwrap()).abs() < 1e-9);
        assert!(a > 0.0);
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let es = vec![est(-0.4, 0.2), est(0.5, 0.35), est(1.2, 0.5)];
        let err = reml_tau2_with(&es, RemlOptions { max_iter: 1, tol: 0.0, tau2_max: None }).unwrap_err();
        assert!(err.to_string().contains("last τ²"), "{err}");
    }

    fn grid_argmax(es: &[EffectEstimate]) -> f64 {
        (0..=100_000)
            .map(|i| i as f64 * 1e-4)
            .map(|t| (t, restricted_log_likelihood(es, t)))
            .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
            .0
    }

    #[test]
    fn matches_grid_search() {
        let sets = [
            vec![est(-0.4, 0.2), est(0.5, 0.35), est(1.2, 0.5), est(0.1, 0.15), est(0.9, 0.3)],
            vec![est(0.1, 0.4), est(0.15, 0.5), est(0.05, 0.3)],
            vec![est(-1.0, 0.3), est(1.5, 0.2), est(0.2, 0.6), est(2.5, 0.4)],
        ];
        for es in &sets {
            let t = reml_tau2(es).unwrap();
            let g = grid_argmax(es);
            assert!((t - g).abs() < 1e-3, "{t} vs grid {g}");
        }
    }

    proptest::proptest! {
        #[test]
        fn boundary_or_stationary(
            data in proptest::collection::vec((-2.0f64..2.0, 0.05f64..1.0), 2..8)
        ) {
            let es: Vec<_> = data.iter().map(|&(y, s)| est(y, s)).collect();
            let t = reml_tau2(&es).unwrap();
            proptest::prop_assert!(t >= 0.0);
            let l = |x: f64| restricted_log_likelihood(&es, x);
            let h = 1e-5;
            if t > 1e-4 {
                let d = (l(t + h) - l(t - h)) / (2.0 * h);
                proptest::prop_assert!(d.abs() < 1e-3, "score {d} at {t}");
            } else {
                proptest::prop_assert!(l(t) >= l(t + 1e-3) - 1e-9);
            }
        }
    }
}
