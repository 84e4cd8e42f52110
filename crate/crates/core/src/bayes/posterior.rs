//! Posterior densities of μ and τ on a 512-point grid.
//!
//! The grid spans the central prior mass (capped at the quadrature range) and
//! is narrowed to the posterior's own extent when that is much tighter, so
//! data-dominated posteriors are still resolved. The τ grid is log-spaced.

use serde::{Deserialize, Serialize};

use super::marginal::{Engine, Model, TOL_INNER};
use crate::effectsize::EffectScale;
use crate::error::{Error, Result};

pub const GRID_POINTS: usize = 512;
const PILOT_POINTS: usize = 513;
/// Prior tail mass left outside the grid on each side.
const GRID_TAIL: f64 = 5e-7;
/// Posterior tail mass used when narrowing.
const NARROW_TAIL: f64 = 1e-9;
const TOL_DENSITY: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Mu,
    Tau,
}

/// `Averaged` mixes fixed_alt and random_alt for μ, and random_null and
/// random_alt for τ, by renormalized posterior model probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorModel {
    FixedAlt,
    RandomAlt,
    RandomNull,
    #[serde(alias = "averaged_alt")]
    Averaged,
}

impl PosteriorModel {
    pub fn label(self) -> &'static str {
        match self {
            PosteriorModel::FixedAlt => "Fixed effects",
            PosteriorModel::RandomAlt => "Random effects",
            PosteriorModel::RandomNull => "Random effects, H0",
            PosteriorModel::Averaged => "Averaged",
        }
    }
}

impl std::str::FromStr for PosteriorModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_alt" | "fixed" => Ok(PosteriorModel::FixedAlt),
            "random_alt" | "random" => Ok(PosteriorModel::RandomAlt),
            "random_null" => Ok(PosteriorModel::RandomNull),
            "averaged" | "averaged_alt" => Ok(PosteriorModel::Averaged),
            other => Err(Error::invalid("model", format!("unknown posterior model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorDensity {
    pub parameter: Parameter,
    pub model: PosteriorModel,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Prior density on the same grid.
    pub prior: Vec<f64>,
    /// Trapezoid integral of `density` over the grid.
    pub normalization: f64,
    pub summary: PosteriorSummary,
}

/// Trapezoid integral of `f` over the grid.
pub(crate) fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2)
        .zip(f.windows(2))
        .map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1]))
        .sum()
}

/// Derivative estimates at the nodes: three-point differences inside, one
/// sided at the ends.
fn slopes(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                (f[1] - f[0]) / (x[1] - x[0])
            } else if i == n - 1 {
                (f[n - 1] - f[n - 2]) / (x[n - 1] - x[n - 2])
            } else {
                let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
                let (d0, d1) = ((f[i] - f[i - 1]) / h0, (f[i + 1] - f[i]) / h1);
                (h1 * d0 + h0 * d1) / (h0 + h1)
            }
        })
        .collect()
}

/// Integral over the first fraction `s` of a cell of the cubic Hermite
/// interpolant.
fn hermite_partial(h: f64, f0: f64, f1: f64, d0: f64, d1: f64, s: f64) -> f64 {
    let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
    h * (f0 * (0.5 * s4 - s3 + s)
        + h * d0 * (0.25 * s4 - 2.0 * s3 / 3.0 + 0.5 * s2)
        + f1 * (s3 - 0.5 * s4)
        + h * d1 * (0.25 * s4 - s3 / 3.0))
}

/// Quantiles from the cubic Hermite interpolant of a density.
pub(crate) struct Cdf<'a> {
    x: &'a [f64],
    f: &'a [f64],
    d: Vec<f64>,
    cum: Vec<f64>,
}

impl<'a> Cdf<'a> {
    pub fn new(x: &'a [f64], f: &'a [f64]) -> Self {
        let d = slopes(x, f);
        let mut cum = Vec::with_capacity(x.len());
        cum.push(0.0);
        for i in 1..x.len() {
            let h = x[i] - x[i - 1];
            let cell = hermite_partial(h, f[i - 1], f[i], d[i - 1], d[i], 1.0).max(0.0);
            cum.push(cum[i - 1] + cell);
        }
        Cdf { x, f, d, cum }
    }

    /// Fraction of the mass below `v`.
    pub fn fraction_below(&self, v: f64) -> f64 {
        let (x, f, d, cum) = (self.x, self.f, &self.d, &self.cum);
        let total = cum[cum.len() - 1];
        if v <= x[0] {
            return 0.0;
        }
        if v >= x[x.len() - 1] {
            return 1.0;
        }
        let i = x.partition_point(|&t| t < v).max(1);
        let h = x[i] - x[i - 1];
        let part = hermite_partial(h, f[i - 1], f[i], d[i - 1], d[i], (v - x[i - 1]) / h);
        ((cum[i - 1] + part) / total).clamp(0.0, 1.0)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let (x, f, d, cum) = (self.x, self.f, &self.d, &self.cum);
        let target = p * cum[cum.len() - 1];
        let i = cum.partition_point(|&c| c < target).clamp(1, x.len() - 1);
        let h = x[i] - x[i - 1];
        let r = target - cum[i - 1];
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if hermite_partial(h, f[i - 1], f[i], d[i - 1], d[i], mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        x[i - 1] + 0.5 * (lo + hi) * h
    }
}

/// Integration coordinates for a parameter: μ as is, τ through u = ln τ with
/// the density times τ.
pub(crate) fn coordinates(parameter: Parameter, grid: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match parameter {
        Parameter::Mu => (grid.to_vec(), f.to_vec()),
        Parameter::Tau => (
            grid.iter().map(|t| t.ln()).collect(),
            grid.iter().zip(f).map(|(t, f)| t * f).collect(),
        ),
    }
}

/// Trapezoid integral of a density in the parameter's integration
/// coordinates.
pub(crate) fn integral(parameter: Parameter, grid: &[f64], f: &[f64]) -> f64 {
    let (u, g) = coordinates(parameter, grid, f);
    trapezoid(&u, &g)
}

pub(crate) fn summarize(parameter: Parameter, grid: &[f64], f: &[f64]) -> PosteriorSummary {
    let (u, g) = coordinates(parameter, grid, f);
    let norm = trapezoid(&u, &g);
    let moment = |h: &dyn Fn(f64) -> f64| {
        let v: Vec<f64> = grid.iter().zip(&g).map(|(x, g)| h(*x) * g).collect();
        trapezoid(&u, &v) / norm
    };
    let mean = moment(&|x| x);
    let sd = moment(&|x| (x - mean) * (x - mean)).max(0.0).sqrt();
    let cdf = Cdf::new(&u, &g);
    let back = |v: f64| match parameter {
        Parameter::Mu => v,
        Parameter::Tau => v.exp(),
    };
    PosteriorSummary {
        mean,
        sd,
        median: back(cdf.quantile(0.5)),
        ci_low: back(cdf.quantile(0.025)),
        ci_high: back(cdf.quantile(0.975)),
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
    v[n - 1] = b;
    v
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect();
    v[0] = a;
    v[n - 1] = b;
    v
}

/// Log densities of the two component posteriors of one parameter.
pub(crate) struct Components<'a> {
    engine: &'a Engine,
    log_m: [f64; 4],
}

impl<'a> Components<'a> {
    pub fn new(engine: &'a Engine, log_m: [f64; 4]) -> Self {
        Components { engine, log_m }
    }

    fn lm(&self, m: Model) -> f64 {
        self.log_m[m as usize]
    }

    fn ln_mu_fixed(&self, mu: f64) -> f64 {
        let p = self.engine.data.profile(0.0);
        self.engine.priors.effect.ln_pdf(mu) + p.loglik(mu) - self.lm(Model::FixedAlt)
    }

    fn ln_mu_random(&self, mu: f64) -> Result<f64> {
        let e = self.engine;
        let inner = e.integrate_u(
            |u| Ok(e.ln_tau_weight(u) + e.data.loglik(mu, (2.0 * u).exp())),
            TOL_DENSITY,
        )?;
        Ok(e.priors.effect.ln_pdf(mu) + inner - self.lm(Model::RandomAlt))
    }

    fn ln_tau_null(&self, tau: f64) -> f64 {
        let e = self.engine;
        e.priors.heterogeneity.ln_pdf(tau) + e.data.loglik(0.0, tau * tau) - self.lm(Model::RandomNull)
    }

    fn ln_tau_random(&self, tau: f64) -> Result<f64> {
        let e = self.engine;
        Ok(e.priors.heterogeneity.ln_pdf(tau) + e.ln_random_alt_given_u(tau.ln(), TOL_INNER)?
            - self.lm(Model::RandomAlt))
    }

    fn eval(&self, parameter: Parameter, which: usize, x: f64) -> Result<f64> {
        match (parameter, which) {
            (Parameter::Mu, 0) => Ok(self.ln_mu_fixed(x)),
            (Parameter::Mu, _) => self.ln_mu_random(x),
            (Parameter::Tau, 0) => Ok(self.ln_tau_null(x)),
            (Parameter::Tau, _) => self.ln_tau_random(x),
        }
    }

    fn base_range(&self, parameter: Parameter) -> (f64, f64) {
        let pri = &self.engine.priors;
        match parameter {
            Parameter::Mu => {
                let p0 = self.engine.data.profile(0.0);
                let (dlo, dhi) = pri.effect.domain();
                let lo = dlo.max(pri.effect.quantile(GRID_TAIL));
                let hi = dhi.min(pri.effect.quantile(1.0 - GRID_TAIL));
                let half = 12.0 / p0.w.sqrt();
                (lo.min(p0.centre - half), hi.max(p0.centre + half))
            }
            Parameter::Tau => {
                let (u0, u1) = self.engine.u_range;
                (u0.exp(), u1.exp())
            }
        }
    }

    fn points(parameter: Parameter, a: f64, b: f64, n: usize) -> Vec<f64> {
        match parameter {
            Parameter::Mu => linspace(a, b, n),
            Parameter::Tau => logspace(a, b, n),
        }
    }

    /// Grid shared by both components of a parameter.
    pub fn grid(&self, parameter: Parameter) -> Result<Vec<f64>> {
        let (a, b) = self.base_range(parameter);
        let pilot = Self::points(parameter, a, b, PILOT_POINTS);
        let mut lo = b;
        let mut hi = a;
        for which in 0..2 {
            let logs = pilot
                .iter()
                .map(|&x| self.eval(parameter, which, x))
                .collect::<Result<Vec<_>>>()?;
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let f: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
            let (u, g) = coordinates(parameter, &pilot, &f);
            let cum = Cdf::new(&u, &g).cum;
            let total = cum[cum.len() - 1];
            let first = cum.partition_point(|&c| c <= NARROW_TAIL * total);
            let last = cum.partition_point(|&c| c < (1.0 - NARROW_TAIL) * total);
            lo = lo.min(pilot[first.saturating_sub(2)]);
            hi = hi.max(pilot[(last + 2).min(pilot.len() - 1)]);
        }
        let narrow = match parameter {
            Parameter::Mu => (hi - lo) < (b - a) / 8.0,
            Parameter::Tau => (hi / lo).ln() < (b / a).ln() / 8.0,
        };
        Ok(if narrow && lo < hi {
            Self::points(parameter, lo, hi, GRID_POINTS)
        } else {
            Self::points(parameter, a, b, GRID_POINTS)
        })
    }

    /// The two component densities on `grid`.
    pub fn densities(&self, parameter: Parameter, grid: &[f64]) -> Result<[Vec<f64>; 2]> {
        let one = |which| {
            grid.iter()
                .map(|&x| self.eval(parameter, which, x).map(f64::exp))
                .collect::<Result<Vec<_>>>()
        };
        Ok([one(0)?, one(1)?])
    }

    fn prior_on(&self, parameter: Parameter, grid: &[f64]) -> Vec<f64> {
        let pri = &self.engine.priors;
        grid.iter()
            .map(|&x| match parameter {
                Parameter::Mu => pri.effect.pdf(x),
                Parameter::Tau => pri.heterogeneity.pdf(x),
            })
            .collect()
    }

    /// Component densities and their mixture with weight `w` on the first
    /// component, in the order (first, second, averaged).
    pub fn all(&self, parameter: Parameter, w: f64) -> Result<[PosteriorDensity; 3]> {
        let grid = self.grid(parameter)?;
        let [a, b] = self.densities(parameter, &grid)?;
        let mix: Vec<f64> = a.iter().zip(&b).map(|(a, b)| w * a + (1.0 - w) * b).collect();
        let prior = self.prior_on(parameter, &grid);
        let first = match parameter {
            Parameter::Mu => PosteriorModel::FixedAlt,
            Parameter::Tau => PosteriorModel::RandomNull,
        };
        let make = |model, density: Vec<f64>| PosteriorDensity {
            parameter,
            model,
            normalization: integral(parameter, &grid, &density),
            summary: summarize(parameter, &grid, &density),
            grid: grid.clone(),
            density,
            prior: prior.clone(),
        };
        Ok([
            make(first, a),
            make(PosteriorModel::RandomAlt, b),
            make(PosteriorModel::Averaged, mix),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformedSummary {
    pub scale: EffectScale,
    /// Posterior mean of exp(μ).
    pub mean: f64,
    /// exp of the posterior mean of μ; never above `mean`.
    pub exp_of_mean: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Moves a μ posterior from a log scale to the ratio scale. Quantiles map
/// through exp; the mean is integrated against the density.
pub fn transform_posterior(density: &PosteriorDensity, scale: EffectScale) -> Result<TransformedSummary> {
    if !scale.is_log() {
        return Err(Error::invalid(
            "scale",
            format!("{} is not a log scale; nothing to transform", scale.code()),
        ));
    }
    if density.parameter != Parameter::Mu {
        return Err(Error::invalid("parameter", "only the effect size can be transformed"));
    }
    let s = &density.summary;
    let ef: Vec<f64> = density
        .grid
        .iter()
        .zip(&density.density)
        .map(|(x, f)| x.exp() * f)
        .collect();
    Ok(TransformedSummary {
        scale,
        mean: trapezoid(&density.grid, &ef) / density.normalization,
        exp_of_mean: s.mean.exp(),
        median: s.median.exp(),
        ci_low: s.ci_low.exp(),
        ci_high: s.ci_high.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_summary_of_a_gaussian() {
        let x = linspace(-3.0, 3.6, 512);
        let f: Vec<f64> = x.iter().map(|x| (-0.5 * (x - 0.3_f64).powi(2) / 0.25).exp()).collect();
        let s = summarize(Parameter::Mu, &x, &f);
        assert!((s.mean - 0.3).abs() < 1e-9);
        assert!((s.sd - 0.5).abs() < 1e-6);
        assert!((s.median - 0.3).abs() < 1e-6);
        let z = 1.959_963_984_540_054;
        assert!((s.ci_low - (0.3 - z * 0.5)).abs() < 1e-6, "{}", s.ci_low - (0.3 - z * 0.5));
        assert!((s.ci_high - (0.3 + z * 0.5)).abs() < 1e-6);
    }

    #[test]
    fn log_grid_summary_of_a_lognormal() {
        // τ ~ LogNormal(ln 0.2, 0.6)
        let x = logspace(0.2 * (-6.0f64).exp(), 0.2 * 6.0f64.exp(), 512);
        let f: Vec<f64> = x
            .iter()
            .map(|t| {
                let z = (t.ln() - 0.2f64.ln()) / 0.6;
                (-0.5 * z * z).exp() / (t * 0.6 * (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        assert!((integral(Parameter::Tau, &x, &f) - 1.0).abs() < 1e-9);
        let s = summarize(Parameter::Tau, &x, &f);
        assert!((s.median - 0.2).abs() < 1e-6);
        assert!((s.mean - 0.2 * (0.18f64).exp()).abs() < 1e-6);
        assert!((s.ci_high - 0.2 * (1.959_964 * 0.6f64).exp()).abs() < 1e-5);
    }

    #[test]
    fn hermite_inversion() {
        // density 3x² on [0,1]: F(x) = x³
        let x = linspace(0.0, 1.0, 5);
        let f: Vec<f64> = x.iter().map(|x| 3.0 * x * x).collect();
        let cdf = Cdf::new(&x, &f);
        let q = cdf.quantile(0.3);
        assert!((q - 0.3f64.cbrt()).abs() < 2e-3, "{q}");
        let flat = [1.0, 1.0, 1.0];
        let cdf = Cdf::new(&x[..3], &flat);
        assert!((cdf.quantile(0.25) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn grids_are_strictly_increasing() {
        let v = logspace(1e-3, 1e4, GRID_POINTS);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(v.len(), GRID_POINTS);
        assert_eq!((v[0], v[GRID_POINTS - 1]), (1e-3, 1e4));
    }
}
