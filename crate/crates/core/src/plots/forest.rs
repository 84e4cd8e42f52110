use serde::{Deserialize, Serialize};

use super::svg::{fmt_num, padded_range, px, AxisMap, Doc};
use crate::effectsize::EffectScale;
use crate::error::{Error, Result};

pub const FOREST_WIDTH: f64 = 800.0;
pub const ROW_HEIGHT: f64 = 24.0;
const TOP: f64 = 32.0;
const PLOT_LEFT: f64 = 240.0;
const PLOT_RIGHT: f64 = 560.0;
const MAX_MARKER: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestRow {
    pub label: String,
    pub y: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub weight_pct: f64,
    #[serde(default)]
    pub is_new: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestPooled {
    pub y: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestPlotSpec {
    pub rows: Vec<ForestRow>,
    pub pooled: ForestPooled,
    pub scale: EffectScale,
    #[serde(default)]
    pub axis_label: Option<String>,
}

const CSS: &str = ".marker{fill:#333}\
.ci{stroke:#333;stroke-width:1.2}\
.pooled-diamond{fill:#111}\
.new-study{fill:#1f77b4;stroke:#1f77b4}\
text.new-study{stroke:none}\
.weight,.estimate{font-variant-numeric:tabular-nums}";

/// Canvas height: one row per study plus the pooled row.
pub fn forest_height(rows: usize) -> f64 {
    60.0 + ROW_HEIGHT * (rows + 1) as f64
}

/// Maps the x axis of a forest plot for `spec`.
pub fn forest_axis(spec: &ForestPlotSpec) -> AxisMap {
    let values = spec
        .rows
        .iter()
        .flat_map(|r| [r.ci_low, r.ci_high])
        .chain([spec.pooled.ci_low, spec.pooled.ci_high, 0.0]);
    let (lo, hi) = padded_range(values, 0.05);
    AxisMap::new(lo, hi, PLOT_LEFT, PLOT_RIGHT)
}

fn check(label: &str, y: f64, lo: f64, hi: f64) -> Result<()> {
    for (name, v) in [("y", y), ("ci_low", lo), ("ci_high", hi)] {
        if !v.is_finite() {
            return Err(Error::invalid(label, format!("{name} is not finite ({v})")));
        }
    }
    if lo > hi {
        return Err(Error::invalid(label, format!("ci_low {lo} exceeds ci_high {hi}")));
    }
    Ok(())
}

/// One row per study with a weight-scaled square and its interval, the pooled
/// estimate as a diamond underneath.
pub fn render_forest(spec: &ForestPlotSpec) -> Result<String> {
    if spec.rows.is_empty() {
        return Err(Error::invalid("rows", "a forest plot needs at least one study"));
    }
    for (i, r) in spec.rows.iter().enumerate() {
        check(&format!("rows[{i}] ({})", r.label), r.y, r.ci_low, r.ci_high)?;
        if !(0.0..=100.0).contains(&r.weight_pct) {
            return Err(Error::invalid(
                format!("rows[{i}] ({})", r.label),
                format!("weight_pct {} outside [0, 100]", r.weight_pct),
            ));
        }
    }
    let p = &spec.pooled;
    check("pooled", p.y, p.ci_low, p.ci_high)?;

    let n = spec.rows.len();
    let height = forest_height(n);
    let x = forest_axis(spec);
    let mut doc = Doc::new(FOREST_WIDTH, height, CSS);
    doc.text("header title", 10.0, 16.0, "start", "Study");
    doc.text("header title", 700.0, 16.0, "end", "Estimate [95% CI]");
    doc.text("header title", 790.0, 16.0, "end", "Weight");

    let bottom = TOP + ROW_HEIGHT * n as f64;
    doc.line("reference-line", x.map(0.0), TOP - 12.0, x.map(0.0), bottom + 12.0);

    for (i, r) in spec.rows.iter().enumerate() {
        let yc = TOP + ROW_HEIGHT * i as f64;
        let accent = if r.is_new { " new-study" } else { "" };
        doc.text(&format!("label{accent}"), 10.0, yc + 4.0, "start", &r.label);
        doc.line(&format!("ci{accent}"), x.map(r.ci_low), yc, x.map(r.ci_high), yc);
        // area proportional to weight
        let side = MAX_MARKER * (r.weight_pct / 100.0).sqrt();
        doc.raw(&format!(
            "<rect class=\"marker{accent}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/>",
            px(x.map(r.y) - side / 2.0),
            px(yc - side / 2.0),
            px(side),
            px(side)
        ));
        doc.text(
            &format!("estimate{accent}"),
            700.0,
            yc + 4.0,
            "end",
            &format!("{} [{}, {}]", fmt_num(r.y), fmt_num(r.ci_low), fmt_num(r.ci_high)),
        );
        doc.text(&format!("weight{accent}"), 790.0, yc + 4.0, "end", &format!("{:.1}%", r.weight_pct));
    }

    let yc = bottom;
    doc.text("label pooled-label title", 10.0, yc + 4.0, "start", &p.label);
    doc.raw(&format!(
        "<polygon class=\"pooled-diamond\" points=\"{}\"/>",
        Doc::points([
            (x.map(p.ci_low), yc),
            (x.map(p.y), yc - 7.0),
            (x.map(p.ci_high), yc),
            (x.map(p.y), yc + 7.0),
        ])
    ));
    doc.text(
        "estimate title",
        700.0,
        yc + 4.0,
        "end",
        &format!("{} [{}, {}]", fmt_num(p.y), fmt_num(p.ci_low), fmt_num(p.ci_high)),
    );
    doc.text("weight", 790.0, yc + 4.0, "end", "100.0%");

    let label = spec.axis_label.clone().unwrap_or_else(|| spec.scale.label().to_string());
    doc.x_axis(&x, yc + 16.0, &label, height - 6.0);
    Ok(doc.finish())
}
