//! Experiments around the `nnsp-core` library: synthetic data, width and
//! training-set-size sweeps, slope fits, configuration, result files and the
//! `nnsp` command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod ek_check;
pub mod ergodicity;
pub mod fit;
pub mod n_sweep;
pub mod output;
pub mod plot;
pub mod single;
pub mod width_sweep;

pub use config::{ExperimentConfig, ExperimentKind, Preset};
pub use dataset::{gen_quadratic_dataset, Dataset};
