//! Ablation suites: model components, window length and pretext task.

use std::path::Path;

use serde::{Deserialize, Serialize};

use pulsebench_core::rppg::Method;
use pulsebench_core::synth::Benchmark;

use crate::config::{ExperimentConfig, PretextTarget, Readout};
use crate::error::Result;
use crate::experiment::{run_supervised, RunSpec};
use crate::metrics::Metrics;
use crate::report::{write_metrics_csv, RunReport};
use crate::selfsup::{pretrain, transfer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Components,
    Length,
    Pretext,
}

/// Window lengths of the length suite. 255 frames stands in for 256, which
/// does not split into three equal chunks.
pub const LENGTHS: [usize; 3] = [576, 384, 255];

/// Pretext rows as (pseudo-label method, image task).
pub const PRETEXT_ROWS: [(Option<Method>, PretextTarget); 7] = [
    (None, PretextTarget::None),
    (Some(Method::Chrom), PretextTarget::None),
    (None, PretextTarget::Mask),
    (Some(Method::Chrom), PretextTarget::Mask),
    (Some(Method::Green), PretextTarget::Mask),
    (Some(Method::Lgi), PretextTarget::Mask),
    (Some(Method::Chrom), PretextTarget::Pbvp),
];

fn pretext_name(pseudo: Option<Method>, target: PretextTarget) -> String {
    let p = pseudo.map_or("none".to_string(), |m| m.to_string());
    let t = match target {
        PretextTarget::None => "none",
        PretextTarget::Mask => "Mask",
        PretextTarget::Pbvp => "PBVP",
    };
    format!("{p}-{t}")
}

/// Row names of a suite, in run order.
pub fn grid(suite: Suite) -> Vec<String> {
    match suite {
        Suite::Components => ["full", "w/o HR head", "w/o decoder", "w/o stacking"].map(String::from).to_vec(),
        Suite::Length => LENGTHS.iter().map(|t| format!("T={t}")).collect(),
        Suite::Pretext => PRETEXT_ROWS.iter().map(|&(p, t)| pretext_name(p, t)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub test: Option<Metrics>,
    pub report: RunReport,
    /// Pre-training report for pretext rows that pre-train.
    pub pretrain: Option<RunReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: Suite,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Writes `ablation.json` and `ablation.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation.json"), serde_json::to_vec_pretty(self)?)?;
        let rows: Vec<_> = self
            .rows
            .iter()
            .filter_map(|r| r.test.map(|m| (r.name.clone(), "test".to_string(), m)))
            .collect();
        write_metrics_csv(&dir.join("ablation.csv"), &rows)
    }
}

fn variant(cfg: &ExperimentConfig, suite: Suite, i: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    match suite {
        Suite::Components => match i {
            1 => {
                c.model.with_hr_head = false;
                c.readout = Readout::Map;
            }
            2 => {
                c.model.with_decoder = false;
                c.readout = Readout::Head;
            }
            3 => c.data.chunks = 1,
            _ => {}
        },
        Suite::Length => c.train.window = LENGTHS[i],
        Suite::Pretext => {
            let (pseudo, target) = PRETEXT_ROWS[i];
            c.pretext.pseudo = pseudo;
            c.pretext.target = target;
        }
    }
    c
}

/// Runs every row of `suite`. Pretext rows pre-train on `pretrain_bench`
/// and then fine-tune; the `none-none` row trains from scratch.
pub fn run_ablation(b: &Benchmark, pretrain_bench: &Benchmark, cfg: &ExperimentConfig, suite: Suite) -> Result<AblationTable> {
    let names = grid(suite);
    let mut rows = Vec::with_capacity(names.len());
    for (i, name) in names.into_iter().enumerate() {
        let c = variant(cfg, suite, i);
        let (report, pre) = match suite {
            Suite::Pretext if i > 0 => {
                let (m, pre) = pretrain(pretrain_bench, &c, None)?;
                (transfer(b, &c, &m, &pre.run_id, None)?, Some(pre))
            }
            _ => (run_supervised(b, &c, RunSpec::scratch(&c), None)?, None),
        };
        rows.push(AblationRow { name, test: report.pooled, report, pretrain: pre });
    }
    Ok(AblationTable { suite, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_the_expected_rows() {
        assert_eq!(grid(Suite::Components).len(), 4);
        assert_eq!(grid(Suite::Length), ["T=576", "T=384", "T=255"]);
        assert_eq!(
            grid(Suite::Pretext),
            ["none-none", "CHROM-none", "none-Mask", "CHROM-Mask", "GREEN-Mask", "LGI-Mask", "CHROM-PBVP"]
        );
    }

    #[test]
    fn variants_are_valid_configs() {
        let cfg = ExperimentConfig::desk();
        for suite in [Suite::Components, Suite::Length, Suite::Pretext] {
            for i in 0..grid(suite).len() {
                variant(&cfg, suite, i).validate().unwrap();
            }
        }
    }
}
