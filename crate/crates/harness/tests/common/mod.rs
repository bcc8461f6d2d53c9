#![allow(dead_code)]

use pulsebench::config::ExperimentConfig;

/// Desk profile shrunk to one window per subject and a few steps.
pub fn micro() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.benchmark.n_subjects = 10;
    c.benchmark.windows_per_subject = 1;
    c.train.stride = 576;
    c.train.batch = 4;
    c.train.max_steps = Some(2);
    c.train.pretrain_max_steps = Some(2);
    c
}
