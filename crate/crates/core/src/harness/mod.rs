//! Synthetic data, point-cloud files, metrics, experiment configs, training
//! and evaluation runners used by the command-line tool.

pub mod audit;
pub mod bench;
pub mod dataset;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod plot;
pub mod robustness;
pub mod synth;
