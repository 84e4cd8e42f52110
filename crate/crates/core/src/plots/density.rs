use serde::{Deserialize, Serialize};

use super::svg::{px, AxisMap, Doc};
use crate::bayes::{Parameter, PosteriorDensity};
use crate::error::{Error, Result};

pub const DENSITY_WIDTH: f64 = 600.0;
pub const DENSITY_HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 580.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 340.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityPlotSpec {
    pub prior: Curve,
    pub posterior: Curve,
    pub ci_low: f64,
    pub ci_high: f64,
    pub x_label: String,
    #[serde(default = "default_y_label")]
    pub y_label: String,
    /// Plotted x range; defaults to the posterior grid.
    #[serde(default)]
    pub x_range: Option<(f64, f64)>,
}

fn default_y_label() -> String {
    "Density".into()
}

impl DensityPlotSpec {
    /// Prior and posterior of one fitted density. τ plots are cut at the
    /// posterior's 99.5% point instead of the long prior tail.
    pub fn from_posterior(d: &PosteriorDensity, x_label: impl Into<String>) -> Self {
        let x_range = match d.parameter {
            Parameter::Mu => None,
            Parameter::Tau => {
                let norm = d.normalization;
                let mut acc = 0.0;
                let mut hi = d.grid[d.grid.len() - 1];
                for i in 1..d.grid.len() {
                    acc += 0.5 * (d.grid[i] - d.grid[i - 1]) * (d.density[i] + d.density[i - 1]);
                    if acc >= 0.995 * norm {
                        hi = d.grid[i];
                        break;
                    }
                }
                Some((0.0, hi.max(d.summary.ci_high)))
            }
        };
        DensityPlotSpec {
            prior: Curve { grid: d.grid.clone(), density: d.prior.clone() },
            posterior: Curve { grid: d.grid.clone(), density: d.density.clone() },
            ci_low: d.summary.ci_low,
            ci_high: d.summary.ci_high,
            x_label: x_label.into(),
            y_label: default_y_label(),
            x_range,
        }
    }
}

const CSS: &str = ".prior{fill:none;stroke:#555;stroke-width:1.5;stroke-dasharray:6 4}\
.posterior{fill:none;stroke:#000;stroke-width:2}\
.credible-region{fill:#888;fill-opacity:0.35;stroke:none}\
.legend-prior{stroke:#555;stroke-width:1.5;stroke-dasharray:6 4}\
.legend-posterior{stroke:#000;stroke-width:2}";

fn check_curve(name: &str, c: &Curve) -> Result<()> {
    if c.grid.len() < 2 || c.grid.len() != c.density.len() {
        return Err(Error::invalid(
            name,
            format!("needs at least two points and matching lengths ({} vs {})", c.grid.len(), c.density.len()),
        ));
    }
    if c.grid.windows(2).any(|w| !(w[0] < w[1])) || c.grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name}.grid"), "must be finite and strictly increasing"));
    }
    if c.density.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid(format!("{name}.density"), "must be finite and non-negative"));
    }
    Ok(())
}

fn interpolate(c: &Curve, x: f64) -> f64 {
    let i = c.grid.partition_point(|g| *g < x).clamp(1, c.grid.len() - 1);
    let (x0, x1) = (c.grid[i - 1], c.grid[i]);
    let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    c.density[i - 1] + t * (c.density[i] - c.density[i - 1])
}

/// Dashed prior, solid posterior and the shaded credible interval.
pub fn render_density(spec: &DensityPlotSpec) -> Result<String> {
    check_curve("prior", &spec.prior)?;
    check_curve("posterior", &spec.posterior)?;
    let g = &spec.posterior.grid;
    let (g0, g1) = (g[0], g[g.len() - 1]);
    if !(spec.ci_low <= spec.ci_high && spec.ci_low >= g0 && spec.ci_high <= g1) {
        return Err(Error::invalid(
            "ci_low",
            format!(
                "credible interval [{}, {}] must lie within the posterior grid [{g0}, {g1}]",
                spec.ci_low, spec.ci_high
            ),
        ));
    }
    let (x0, x1) = match spec.x_range {
        Some((a, b)) if a.is_finite() && b.is_finite() && a < b => (a, b),
        Some(_) => return Err(Error::invalid("x_range", "must be finite and increasing")),
        None => (g0, g1),
    };
    let visible = |c: &'_ Curve| {
        c.grid
            .iter()
            .zip(&c.density)
            .filter(|(x, _)| **x >= x0 && **x <= x1)
            .map(|(_, d)| *d)
            .collect::<Vec<_>>()
    };
    let top = visible(&spec.prior)
        .into_iter()
        .chain(visible(&spec.posterior))
        .fold(0.0, f64::max);
    let x = AxisMap::new(x0, x1, LEFT, RIGHT);
    let y = AxisMap::new(0.0, if top > 0.0 { 1.08 * top } else { 1.0 }, BOTTOM, TOP);

    let path = |c: &Curve| {
        let pts: Vec<String> = c
            .grid
            .iter()
            .zip(&c.density)
            .filter(|(g, _)| **g >= x0 && **g <= x1)
            .map(|(g, d)| format!("{},{}", px(x.map(*g)), px(y.map(*d))))
            .collect();
        if pts.is_empty() {
            String::new()
        } else {
            format!("M{}", pts.join(" L"))
        }
    };

    let mut doc = Doc::new(DENSITY_WIDTH, DENSITY_HEIGHT, CSS);
    let post = &spec.posterior;
    let mut region = vec![(spec.ci_low, 0.0), (spec.ci_low, interpolate(post, spec.ci_low))];
    region.extend(
        post.grid
            .iter()
            .zip(&post.density)
            .filter(|(g, _)| **g > spec.ci_low && **g < spec.ci_high)
            .map(|(g, d)| (*g, *d)),
    );
    region.push((spec.ci_high, interpolate(post, spec.ci_high)));
    region.push((spec.ci_high, 0.0));
    doc.raw(&format!(
        "<polygon class=\"credible-region\" points=\"{}\"/>",
        Doc::points(region.iter().map(|(a, b)| (x.map(*a), y.map(*b))))
    ));
    doc.raw(&format!("<path class=\"prior\" d=\"{}\"/>", path(&spec.prior)));
    doc.raw(&format!("<path class=\"posterior\" d=\"{}\"/>", path(post)));

    doc.x_axis(&x, BOTTOM + 4.0, &spec.x_label, DENSITY_HEIGHT - 12.0);
    let (_, ymax) = y.domain();
    doc.line("axis", LEFT - 6.0, y.map(0.0), LEFT - 6.0, y.map(ymax));
    let ticks = super::svg::nice_ticks(0.0, ymax, 5);
    let step = if ticks.len() > 1 { ticks[1] - ticks[0] } else { 1.0 };
    for t in ticks {
        let ty = y.map(t);
        doc.line("tick", LEFT - 10.0, ty, LEFT - 6.0, ty);
        doc.text("tick-label", LEFT - 13.0, ty + 4.0, "end", &super::svg::fmt_tick(t, step));
    }
    doc.raw(&format!(
        "<text class=\"axis-label\" x=\"16\" y=\"{c}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {c})\">{}</text>",
        super::svg::escape(&spec.y_label),
        c = px(0.5 * (TOP + BOTTOM))
    ));

    // legend
    let lx = RIGHT - 120.0;
    doc.line("legend-prior", lx, TOP + 8.0, lx + 28.0, TOP + 8.0);
    doc.text("legend", lx + 34.0, TOP + 12.0, "start", "Prior");
    doc.line("legend-posterior", lx, TOP + 26.0, lx + 28.0, TOP + 26.0);
    doc.text("legend", lx + 34.0, TOP + 30.0, "start", "Posterior");
    doc.raw(&format!(
        "<rect class=\"credible-region\" x=\"{}\" y=\"{}\" width=\"28\" height=\"10\"/>",
        px(lx),
        px(TOP + 39.0)
    ));
    doc.text("legend", lx + 34.0, TOP + 48.0, "start", "95% CI");
    Ok(doc.finish())
}

/// Pixel maps used for `spec`, for callers that inspect coordinates.
pub fn density_axes(spec: &DensityPlotSpec) -> AxisMap {
    let g = &spec.posterior.grid;
    let (x0, x1) = spec.x_range.unwrap_or((g[0], g[g.len() - 1]));
    AxisMap::new(x0, x1, LEFT, RIGHT)
}
