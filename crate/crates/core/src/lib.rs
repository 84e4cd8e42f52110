//! Clinical-trial outcome corpus and meta-analysis engine.
//!
//! The crate covers the whole path from stored trial tables to pooled
//! results: [`dataset`] loads and selects studies, [`effectsize`] reduces
//! them to estimates, [`classical`] and [`bayes`] pool them, [`plots`]
//! renders SVG figures and [`analysis`] ties everything into the request and
//! response types shared by the command line and the HTTP service.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dataset;
pub mod effectsize;
pub mod bayes;
pub mod classical;
pub mod error;
pub mod plots;
pub mod search;

pub use error::{Error, Result};
