//! Training, self-supervised pre-training and evaluation of the map
//! network on rPPG benchmarks, plus the `pulsebench` command line.

pub mod ablation;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod folds;
pub mod masking;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod selfsup;
pub mod train;

pub use error::{HarnessError, Result};
