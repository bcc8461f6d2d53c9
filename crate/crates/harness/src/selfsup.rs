//! Self-supervised pre-training on unlabeled recordings (masked MSTmap
//! reconstruction or pseudo-BVP prediction, optionally with pseudo heart
//! rates), then linear probing and transfer to a labelled benchmark.

use std::path::Path;

use pulsebench_core::mstmap::{build_mstmap, stack_square, RoiTraceSet, StackedMap};
use pulsebench_core::rppg::{build_pbvpmap, pseudo_hr, Method, PseudoLabel};
use pulsebench_core::synth::{Benchmark, SubjectRecord};
use pulsebench_model::{checkpoint, Model};

use crate::config::{DataConfig, ExperimentConfig, MaskSpec, PretextTarget};
use crate::data::{build_samples, HrSource, MapTarget, SampleSet, SampleSpec};
use crate::error::Result;
use crate::experiment::{model_for, run_supervised, RunSpec, Tuning};
use crate::masking::{apply_patch_mask, patch_mask};
use crate::report::{FoldReport, RunReport};
use crate::train::{fit, FitOptions, Masking};

/// One pre-training example in stacked form.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextSample {
    pub input: StackedMap,
    pub target: StackedMap,
    pub hr_label: Option<PseudoLabel>,
    /// Element mask over `input` (true where masked); `None` when unmasked.
    pub mask: Option<Vec<bool>>,
}

/// Copy of `map` with a patch mask drawn from stream `stream` of the
/// spec's seed, plus the element mask.
pub fn mask_patches(map: &StackedMap, spec: &MaskSpec, fill: f64, stream: u64) -> Result<(StackedMap, Vec<bool>)> {
    let (h, w) = (map.height(), map.width());
    let patches = patch_mask(h, w, spec, stream)?;
    let mut img = map.to_f64();
    let mask = apply_patch_mask(&mut img, h, w, spec.patch, &patches, fill);
    let mut out = map.clone();
    for (d, s) in out.image_mut().iter_mut().zip(&img) {
        *d = *s as f32;
    }
    Ok((out, mask))
}

fn stacked_mst(traces: &RoiTraceSet, data: &DataConfig) -> Result<StackedMap> {
    let mst = build_mstmap(traces, data.band)?;
    Ok(stack_square(&mst, data.chunks, data.rows_mode.fold(traces.n_channels()))?)
}

fn label(traces: &RoiTraceSet, pseudo: Option<Method>) -> Result<Option<PseudoLabel>> {
    Ok(match pseudo {
        Some(m) => Some(pseudo_hr(traces, m)?),
        None => None,
    })
}

/// Masked MSTmap as input, the MSTmap itself as target.
pub fn make_pretext_sample(
    traces: &RoiTraceSet,
    data: &DataConfig,
    spec: &MaskSpec,
    fill: f64,
    pseudo: Option<Method>,
) -> Result<PretextSample> {
    let target = stacked_mst(traces, data)?;
    let (input, mask) = mask_patches(&target, spec, fill, 0)?;
    Ok(PretextSample { input, target, hr_label: label(traces, pseudo)?, mask: Some(mask) })
}

/// Unmasked MSTmap as input, the stacked pseudo-BVP map as target.
pub fn make_pbvp_sample(traces: &RoiTraceSet, data: &DataConfig, method: Method, pseudo: Option<Method>) -> Result<PretextSample> {
    let input = stacked_mst(traces, data)?;
    let pbvp = build_pbvpmap(traces, method, data.band)?;
    let target = stack_square(&pbvp.map, data.chunks, input.channels())?;
    Ok(PretextSample { input, target, hr_label: label(traces, pseudo)?, mask: None })
}

pub fn masking(cfg: &ExperimentConfig) -> Option<Masking> {
    let p = &cfg.pretext;
    (p.target == PretextTarget::Mask).then_some(Masking {
        spec: p.mask,
        stage: p.mask_stage,
        fill: p.mask_fill,
        masked_only: p.loss_on_masked_only,
    })
}

/// Pre-training windows from every subject of an unlabeled benchmark.
pub fn pretext_set(b: &Benchmark, cfg: &ExperimentConfig) -> Result<SampleSet> {
    let p = &cfg.pretext;
    let target = match p.target {
        PretextTarget::Mask => MapTarget::Mst,
        PretextTarget::Pbvp => MapTarget::Pbvp(p.pbvp_method),
        PretextTarget::None => MapTarget::None,
    };
    let hr = p.pseudo.map_or(HrSource::None, HrSource::Pseudo);
    let subjects: Vec<&SubjectRecord> = b.subjects.iter().collect();
    build_samples(
        &subjects,
        &SampleSpec { data: &cfg.data, model: &cfg.model, window: cfg.train.window, stride: cfg.train.stride, target, hr },
    )
}

/// Pre-trains a fresh model and returns it with its report.
pub fn pretrain(b: &Benchmark, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(Model, RunReport)> {
    cfg.validate()?;
    let set = pretext_set(b, cfg)?;
    let mut model = model_for(&set, cfg, None)?;
    let train = cfg.pretrain_train();
    let opts = FitOptions { train: &train, epochs: train.epochs, loss: &cfg.loss, masking: masking(cfg) };
    let loss_curve = fit(&mut model, &set, &opts)?;
    let mut rep = FoldReport {
        fold: None,
        train_subjects: b.subjects.iter().map(|s| s.labels.subject_id.clone()).collect(),
        test_subjects: Vec::new(),
        n_train: set.len(),
        n_test: 0,
        train_metrics: None,
        test_metrics: None,
        predictions: Vec::new(),
        loss_curve,
        checkpoint: None,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("pretrain.ckpt");
        checkpoint::save(&path, &model)?;
        rep.checkpoint = Some(path.display().to_string());
    }
    let report = RunReport::new("pretrain", cfg, None, vec![rep], Vec::new())?;
    Ok((model, report))
}

/// Trains only the HR head's final layer on the labelled benchmark.
pub fn linear_probe(b: &Benchmark, cfg: &ExperimentConfig, pretrained: &Model, pretrain_id: &str, out: Option<&Path>) -> Result<RunReport> {
    let spec = RunSpec {
        kind: "probe",
        init: Some(pretrained),
        tuning: Tuning::Probe,
        epochs: cfg.train.finetune_epochs,
        provenance: vec![pretrain_id.to_string()],
    };
    run_supervised(b, cfg, spec, out)
}

/// Fine-tunes every parameter on the labelled benchmark.
pub fn transfer(b: &Benchmark, cfg: &ExperimentConfig, pretrained: &Model, pretrain_id: &str, out: Option<&Path>) -> Result<RunReport> {
    let spec = RunSpec {
        kind: "transfer",
        init: Some(pretrained),
        tuning: Tuning::Full,
        epochs: cfg.train.finetune_epochs,
        provenance: vec![pretrain_id.to_string()],
    };
    run_supervised(b, cfg, spec, out)
}
