//! Command-line driver and HTTP service for the trialbench engine.

pub mod cli;
mod report;
pub mod service;
