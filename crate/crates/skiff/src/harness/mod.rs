//! Declarative experiment runner: scenario configuration, tracking metrics,
//! artifact emission (CSV, JSON, SVG), and the preset studies.

pub mod config;
pub mod metrics;
pub mod plot;
pub mod runner;
