//! Supervised runs over subject-exclusive folds, checkpoint evaluation and
//! the traditional-method baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use pulsebench_core::mstmap::window_samples;
use pulsebench_core::rppg::{pseudo_hr, Method};
use pulsebench_core::synth::{gen_benchmark, read_benchmark, Benchmark, SubjectRecord};
use pulsebench_model::{checkpoint, Model};

use crate::config::{band_midpoint_bpm, ExperimentConfig};
use crate::data::{build_samples, HrSource, MapTarget, SampleSet, SampleSpec};
use crate::error::{HarnessError, Result};
use crate::folds::kfold_split;
use crate::metrics::{compute_metrics, Metrics};
use crate::report::{FoldReport, RunReport};
use crate::train::{evaluate, fit, FitOptions, PredictionRecord};

/// Benchmark from `data_dir` when set, generated otherwise.
pub fn load_benchmark(cfg: &ExperimentConfig) -> Result<Benchmark> {
    match &cfg.data_dir {
        Some(dir) => Ok(read_benchmark(dir)?),
        None => Ok(gen_benchmark(&cfg.benchmark)?),
    }
}

pub fn subject_ids(b: &Benchmark) -> Vec<String> {
    b.subjects.iter().map(|s| s.labels.subject_id.clone()).collect()
}

pub fn select<'a>(b: &'a Benchmark, ids: &[String]) -> Vec<&'a SubjectRecord> {
    b.subjects.iter().filter(|s| ids.contains(&s.labels.subject_id)).collect()
}

/// Labelled sets of one fold: overlapping training windows, plus
/// non-overlapping windows of the training and test subjects for scoring.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: SampleSet,
    pub train_eval: SampleSet,
    pub test: SampleSet,
}

pub fn labelled_set(subjects: &[&SubjectRecord], cfg: &ExperimentConfig, stride: usize) -> Result<SampleSet> {
    build_samples(
        subjects,
        &SampleSpec {
            data: &cfg.data,
            model: &cfg.model,
            window: cfg.train.window,
            stride,
            target: MapTarget::Bvp,
            hr: HrSource::Truth,
        },
    )
}

pub fn fold_data(b: &Benchmark, cfg: &ExperimentConfig, train_ids: &[String], test_ids: &[String]) -> Result<FoldData> {
    let tr = select(b, train_ids);
    let te = select(b, test_ids);
    Ok(FoldData {
        train: labelled_set(&tr, cfg, cfg.train.stride)?,
        train_eval: labelled_set(&tr, cfg, cfg.train.window)?,
        test: labelled_set(&te, cfg, cfg.train.window)?,
    })
}

/// Which parameters a supervised run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tuning {
    Full,
    /// Only the final fully connected layer of the HR head.
    Probe,
}

/// Model for `set`: a copy of `init` when given, a fresh one otherwise.
pub fn model_for(set: &SampleSet, cfg: &ExperimentConfig, init: Option<&Model>) -> Result<Model> {
    let want = set.model_config(&cfg.model);
    match init {
        Some(m) => {
            if m.config.input_hw != want.input_hw || m.config.in_channels != want.in_channels {
                return Err(HarnessError::config(format!(
                    "checkpoint expects {:?}x{} inputs, data gives {:?}x{}",
                    m.config.input_hw, m.config.in_channels, want.input_hw, want.in_channels
                )));
            }
            Ok(m.clone())
        }
        None => Ok(Model::new(want)?),
    }
}

pub fn train_fold(
    cfg: &ExperimentConfig,
    data: &FoldData,
    init: Option<&Model>,
    tuning: Tuning,
    epochs: usize,
) -> Result<(Model, FoldReport)> {
    let mut model = model_for(&data.train, cfg, init)?;
    model.store.unfreeze_all();
    if tuning == Tuning::Probe {
        if !model.config.with_hr_head {
            return Err(HarnessError::config("linear probing needs an HR head"));
        }
        model.store.freeze_all_except(&["hr_head.fc"]);
    }
    let opts = FitOptions { train: &cfg.train, epochs, loss: &cfg.loss, masking: None };
    let loss_curve = fit(&mut model, &data.train, &opts)?;
    let band = cfg.data.band;
    let train_eval = evaluate(&model, &data.train_eval, cfg.readout, band)?;
    let test_eval = evaluate(&model, &data.test, cfg.readout, band)?;
    let subjects = |s: &SampleSet| {
        let mut v: Vec<String> = s.samples.iter().map(|x| x.subject.clone()).collect();
        v.dedup();
        v
    };
    let report = FoldReport {
        fold: None,
        train_subjects: subjects(&data.train),
        test_subjects: subjects(&data.test),
        n_train: data.train.len(),
        n_test: data.test.len(),
        train_metrics: Some(train_eval.metrics),
        test_metrics: Some(test_eval.metrics),
        predictions: test_eval.predictions,
        loss_curve,
        checkpoint: None,
    };
    Ok((model, report))
}

/// What a supervised run starts from and trains.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub kind: &'a str,
    pub init: Option<&'a Model>,
    pub tuning: Tuning,
    pub epochs: usize,
    pub provenance: Vec<String>,
}

impl<'a> RunSpec<'a> {
    /// Full training of a fresh model for `cfg.train.epochs`.
    pub fn scratch(cfg: &ExperimentConfig) -> Self {
        Self { kind: "train", init: None, tuning: Tuning::Full, epochs: cfg.train.epochs, provenance: Vec::new() }
    }
}

/// Trains and scores every configured fold, saving one checkpoint per fold
/// under `out` when given.
pub fn run_supervised(b: &Benchmark, cfg: &ExperimentConfig, spec: RunSpec<'_>, out: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let folds = kfold_split(&subject_ids(b), cfg.folds, cfg.fold_seed)?;
    let mut reports = Vec::new();
    for i in cfg.fold_indices() {
        let (train_ids, test_ids) = folds.split(i);
        let data = fold_data(b, cfg, &train_ids, &test_ids)?;
        let (model, mut rep) = train_fold(cfg, &data, spec.init, spec.tuning, spec.epochs)?;
        rep.fold = Some(i);
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("fold{i}.ckpt"));
            checkpoint::save(&path, &model)?;
            rep.checkpoint = Some(path.display().to_string());
        }
        reports.push(rep);
    }
    RunReport::new(spec.kind, cfg, Some(folds), reports, spec.provenance)
}

/// Scores a trained model on every subject's non-overlapping windows.
pub fn eval_checkpoint(b: &Benchmark, cfg: &ExperimentConfig, model: &Model, provenance: Vec<String>) -> Result<RunReport> {
    let all: Vec<&SubjectRecord> = b.subjects.iter().collect();
    let set = labelled_set(&all, cfg, cfg.train.window)?;
    model_for(&set, cfg, Some(model))?;
    let ev = evaluate(model, &set, cfg.readout, cfg.data.band)?;
    let rep = FoldReport {
        fold: None,
        train_subjects: Vec::new(),
        test_subjects: subject_ids(b),
        n_train: 0,
        n_test: set.len(),
        train_metrics: None,
        test_metrics: Some(ev.metrics),
        predictions: ev.predictions,
        loss_curve: Vec::new(),
        checkpoint: None,
    };
    RunReport::new("eval", cfg, None, vec![rep], provenance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: Method,
    pub metrics: Metrics,
    /// Windows without an in-band peak, scored at the band midpoint.
    pub no_peak: usize,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub window: usize,
    pub rows: Vec<BaselineRow>,
}

/// Every traditional method on every subject's non-overlapping windows.
pub fn run_baseline(b: &Benchmark, window: usize, methods: &[Method]) -> Result<BaselineReport> {
    let mut rows = Vec::new();
    for &method in methods {
        let mut predictions = Vec::new();
        let mut no_peak = 0;
        for rec in &b.subjects {
            let wins = window_samples(&rec.traces, window, window)?;
            for (win, &start) in wins.windows.iter().zip(&wins.starts) {
                let Some(truth) = rec.labels.window_hr(start, window) else { continue };
                let pred = match pseudo_hr(win, method)?.hr_bpm {
                    Some(hr) => hr,
                    None => {
                        no_peak += 1;
                        band_midpoint_bpm()
                    }
                };
                predictions.push(PredictionRecord {
                    subject: rec.labels.subject_id.clone(),
                    start,
                    pred_bpm: pred,
                    true_bpm: truth,
                });
            }
        }
        let (p, t): (Vec<f64>, Vec<f64>) = predictions.iter().map(|r| (r.pred_bpm, r.true_bpm)).unzip();
        rows.push(BaselineRow { method, metrics: compute_metrics(&p, &t)?, no_peak, predictions });
    }
    Ok(BaselineReport { window, rows })
}
