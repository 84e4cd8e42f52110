//! Standalone SVG 1.1 figures: forest, funnel and prior/posterior density
//! plots. Output is a pure function of the input; studies added by the user
//! carry the `new-study` class.

mod density;
mod forest;
mod funnel;
pub mod svg;

pub use density::{density_axes, render_density, Curve, DensityPlotSpec, DENSITY_HEIGHT, DENSITY_WIDTH};
pub use forest::{
    forest_axis, forest_height, render_forest, ForestPlotSpec, ForestPooled, ForestRow, FOREST_WIDTH,
    ROW_HEIGHT,
};
pub use funnel::{funnel_axes, render_funnel, FUNNEL_HEIGHT, FUNNEL_WIDTH};
pub use svg::AxisMap;

#[cfg(test)]
mod tests;
