use super::svg::{padded_range, px, AxisMap, Doc};
use crate::classical::{PooledResult, Z_975};
use crate::effectsize::{EffectEstimate, EffectScale};
use crate::error::{Error, Result};

pub const FUNNEL_WIDTH: f64 = 600.0;
pub const FUNNEL_HEIGHT: f64 = 450.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 580.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 390.0;

const CSS: &str = ".study-point{fill:#333;stroke:#fff;stroke-width:0.5}\
.study-point.new-study{fill:#1f77b4}\
.pooled-line{stroke:#111;stroke-width:1.2}\
.funnel{fill:none;stroke:#666;stroke-dasharray:5 4}";

/// The (x, y) axis maps used by [`render_funnel`].
pub fn funnel_axes(estimates: &[EffectEstimate], pooled: &PooledResult) -> (AxisMap, AxisMap) {
    let se_max = 1.1 * estimates.iter().map(|e| e.se).fold(0.0, f64::max);
    let se_max = if se_max > 0.0 { se_max } else { 1.0 };
    let (lo, hi) = padded_range(
        estimates
            .iter()
            .map(|e| e.y)
            .chain([pooled.y - Z_975 * se_max, pooled.y + Z_975 * se_max]),
        0.03,
    );
    // symmetric about the pooled line
    let half = (pooled.y - lo).max(hi - pooled.y);
    (
        AxisMap::new(pooled.y - half, pooled.y + half, LEFT, RIGHT),
        AxisMap::new(0.0, se_max, TOP, BOTTOM),
    )
}

/// Effect estimates against their standard errors (inverted axis) with the
/// pseudo 95% region around the pooled estimate.
pub fn render_funnel(
    estimates: &[EffectEstimate],
    pooled: &PooledResult,
    scale: EffectScale,
) -> Result<String> {
    if estimates.is_empty() {
        return Err(Error::InsufficientStudies("a funnel plot needs at least one study".into()));
    }
    if let Some(e) = estimates.iter().find(|e| !(e.y.is_finite() && e.se.is_finite())) {
        return Err(Error::invalid(&e.label, "estimate is not finite"));
    }
    let (x, y) = funnel_axes(estimates, pooled);
    let se_max = y.domain().1;
    let mut doc = Doc::new(FUNNEL_WIDTH, FUNNEL_HEIGHT, CSS);
    doc.raw(&format!(
        "<polyline class=\"funnel\" points=\"{}\"/>",
        Doc::points([
            (x.map(pooled.y - Z_975 * se_max), y.map(se_max)),
            (x.map(pooled.y), y.map(0.0)),
            (x.map(pooled.y + Z_975 * se_max), y.map(se_max)),
        ])
    ));
    doc.line("pooled-line", x.map(pooled.y), y.map(0.0), x.map(pooled.y), y.map(se_max));
    for e in estimates {
        let class = if e.is_new { "study-point new-study" } else { "study-point" };
        doc.raw(&format!(
            "<circle class=\"{class}\" cx=\"{}\" cy=\"{}\" r=\"4\"><title>{}</title></circle>",
            px(x.map(e.y)),
            px(y.map(e.se)),
            super::svg::escape(&e.label)
        ));
    }
    doc.x_axis(&x, BOTTOM + 6.0, scale.label(), FUNNEL_HEIGHT - 12.0);
    // se axis on the left, zero at the top
    doc.line("axis", LEFT - 6.0, y.map(0.0), LEFT - 6.0, y.map(se_max));
    let ticks = super::svg::nice_ticks(0.0, se_max, 5);
    let step = if ticks.len() > 1 { ticks[1] - ticks[0] } else { 1.0 };
    for t in ticks {
        let ty = y.map(t);
        doc.line("tick", LEFT - 10.0, ty, LEFT - 6.0, ty);
        doc.text("tick-label", LEFT - 13.0, ty + 4.0, "end", &super::svg::fmt_tick(t, step));
    }
    doc.raw(&format!(
        "<text class=\"axis-label\" x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">Standard Error</text>",
        px(0.5 * (TOP + BOTTOM)),
        px(0.5 * (TOP + BOTTOM))
    ));
    Ok(doc.finish())
}
