//! Run reports: JSON summary, metrics CSV and loss-curve CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::folds::Folds;
use crate::metrics::{compute_metrics, Metrics};
use crate::train::{PredictionRecord, StepRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// `None` for runs without a held-out split (pre-training).
    pub fold: Option<usize>,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub train_metrics: Option<Metrics>,
    pub test_metrics: Option<Metrics>,
    pub predictions: Vec<PredictionRecord>,
    pub loss_curve: Vec<StepRecord>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: String,
    pub run_id: String,
    pub config: ExperimentConfig,
    pub splits: Option<Folds>,
    pub folds: Vec<FoldReport>,
    /// Metrics over the test predictions of every fold.
    pub pooled: Option<Metrics>,
    /// Run ids this run builds on, such as the pre-training run.
    pub provenance: Vec<String>,
}

/// Stable identifier of a run: SHA-256 over its kind, configuration and
/// provenance, truncated to 16 hex digits.
pub fn run_id(kind: &str, config: &ExperimentConfig, provenance: &[String]) -> Result<String> {
    let body = serde_json::to_vec(&(kind, config, provenance))?;
    Ok(hex::encode(Sha256::digest(&body))[..16].to_string())
}

impl RunReport {
    pub fn new(kind: &str, config: &ExperimentConfig, splits: Option<Folds>, folds: Vec<FoldReport>, provenance: Vec<String>) -> Result<Self> {
        let (pred, truth): (Vec<f64>, Vec<f64>) =
            folds.iter().flat_map(|f| f.predictions.iter().map(|p| (p.pred_bpm, p.true_bpm))).unzip();
        let pooled = if pred.len() >= 2 { Some(compute_metrics(&pred, &truth)?) } else { None };
        Ok(Self {
            kind: kind.to_string(),
            run_id: run_id(kind, config, &provenance)?,
            config: config.clone(),
            splits,
            folds,
            pooled,
            provenance,
        })
    }

    /// Writes `report.json`, `metrics.csv` and `loss_curve.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(self)?)?;
        write_metrics_csv(&dir.join("metrics.csv"), &self.metric_rows())?;
        let mut w = csv::Writer::from_path(dir.join("loss_curve.csv"))?;
        w.write_record(["fold", "step", "epoch", "total", "l_reg", "l_temp", "l_freq"])?;
        for f in &self.folds {
            let fold = f.fold.map_or(String::new(), |i| i.to_string());
            for s in &f.loss_curve {
                w.write_record([
                    fold.clone(),
                    s.step.to_string(),
                    s.epoch.to_string(),
                    s.total.to_string(),
                    s.l_reg.to_string(),
                    s.l_temp.to_string(),
                    s.l_freq.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `(label, split, metrics)` rows for every fold and the pooled result.
    pub fn metric_rows(&self) -> Vec<(String, String, Metrics)> {
        let mut rows = Vec::new();
        for f in &self.folds {
            let label = f.fold.map_or("-".to_string(), |i| i.to_string());
            if let Some(m) = f.train_metrics {
                rows.push((label.clone(), "train".to_string(), m));
            }
            if let Some(m) = f.test_metrics {
                rows.push((label, "test".to_string(), m));
            }
        }
        if let Some(m) = self.pooled {
            rows.push(("pooled".to_string(), "test".to_string(), m));
        }
        rows
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[(String, String, Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "split", "n", "mae", "rmse", "sd", "pearson_r"])?;
    for (name, split, m) in rows {
        w.write_record([
            name.clone(),
            split.clone(),
            m.n.to_string(),
            m.mae.to_string(),
            m.rmse.to_string(),
            m.sd.to_string(),
            m.pearson_r.map_or(String::new(), |r| r.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold(preds: &[(f64, f64)]) -> FoldReport {
        FoldReport {
            fold: Some(0),
            train_subjects: vec!["a".into()],
            test_subjects: vec!["b".into()],
            n_train: 1,
            n_test: preds.len(),
            train_metrics: None,
            test_metrics: None,
            predictions: preds
                .iter()
                .enumerate()
                .map(|(i, &(p, t))| PredictionRecord { subject: "b".into(), start: i, pred_bpm: p, true_bpm: t })
                .collect(),
            loss_curve: vec![StepRecord { step: 1, epoch: 0, total: 1.0, l_reg: 0.1, l_temp: 0.2, l_freq: 0.3 }],
            checkpoint: None,
        }
    }

    #[test]
    fn run_id_depends_on_config_and_provenance() {
        let c = ExperimentConfig::desk();
        let a = run_id("train", &c, &[]).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, run_id("train", &c, &[]).unwrap());
        assert_ne!(a, run_id("transfer", &c, &[]).unwrap());
        assert_ne!(a, run_id("train", &c, &["x".into()]).unwrap());
        let mut c2 = c.clone();
        c2.train.seed = 1;
        assert_ne!(a, run_id("train", &c2, &[]).unwrap());
    }

    #[test]
    fn pooled_metrics_cover_all_folds_and_files_are_written() {
        let r = RunReport::new(
            "train",
            &ExperimentConfig::desk(),
            None,
            vec![fold(&[(70.0, 72.0), (80.0, 78.0)]), fold(&[(90.0, 90.0)])],
            vec![],
        )
        .unwrap();
        let p = r.pooled.unwrap();
        assert_eq!(p.n, 3);
        assert!((p.mae - 4.0 / 3.0).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        let back: RunReport = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        let curve = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
        assert_eq!(curve.lines().count(), 3);
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(metrics.lines().nth(1).unwrap().starts_with("pooled,test,3,"));
    }
}
