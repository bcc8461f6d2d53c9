//! Mini-batch training, prediction and evaluation of the map network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pulsebench_core::losses::{total_loss, Prediction, Target};
use pulsebench_core::timeseries::{dominant_hr, psd_slice};
use pulsebench_core::{Error as CoreError, FreqBand};
use pulsebench_model::Model;

use crate::config::{band_midpoint_bpm, scale_hr, unscale_hr, LossSettings, MaskSpec, MaskStage, Readout, TrainConfig};
use crate::data::{Sample, SampleSet};
use crate::error::{HarnessError, Result};
use crate::masking::mask_image;
use crate::metrics::{compute_metrics, Metrics};
use crate::optim::AdamW;

/// Online masking applied to every training input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Masking {
    pub spec: MaskSpec,
    pub stage: MaskStage,
    pub fill: f64,
    /// Map losses only see masked positions; elsewhere the prediction is
    /// replaced by the target.
    pub masked_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub l_reg: f64,
    pub l_temp: f64,
    pub l_freq: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions<'a> {
    pub train: &'a TrainConfig,
    pub epochs: usize,
    pub loss: &'a LossSettings,
    pub masking: Option<Masking>,
}

/// Input of sample `idx` at `epoch` with the mask drawn for that pair, and
/// the element mask over target rows.
pub fn masked_input(set: &SampleSet, s: &Sample, m: &Masking, stream: u64) -> Result<(Vec<f64>, Vec<bool>)> {
    let lay = &set.layout;
    match m.stage {
        MaskStage::Stacked => {
            let mut x = s.input.clone();
            let mask = mask_image(&mut x, lay.height, lay.width, &m.spec, m.fill, stream)?;
            Ok((x, lay.unstack(&mask)))
        }
        MaskStage::Rows => {
            let mut rows = lay.unstack(&s.input);
            let mask = mask_image(&mut rows, lay.n_rows, lay.len, &m.spec, m.fill, stream)?;
            Ok((lay.stack(&rows), mask))
        }
    }
}

fn stream_of(epoch: usize, idx: usize, n: usize) -> u64 {
    (epoch * n + idx) as u64
}

/// True when anything outside the HR head is trainable.
fn map_trainable(model: &Model) -> bool {
    model.store.params().iter().any(|p| !p.frozen && !p.name.starts_with("hr_head."))
}

/// Accumulates the gradient of one sample's loss.
fn sample_step(
    model: &mut Model,
    set: &SampleSet,
    s: &Sample,
    input: &[f64],
    loss_mask: Option<&[bool]>,
    opts: &FitOptions<'_>,
    use_map: bool,
) -> Result<pulsebench_core::losses::LossBreakdown> {
    let lay = &set.layout;
    let (out, cache) = model.forward_train(input)?;
    let pred_rows = match (&out.map, &s.target) {
        (Some(m), Some(t)) if use_map => {
            let mut rows = lay.unstack(m);
            if let Some(mask) = loss_mask {
                for i in 0..rows.len() {
                    if !mask[i] {
                        rows[i] = t[i];
                    }
                }
            }
            Some(rows)
        }
        _ => None,
    };
    let (b, g) = total_loss(
        Prediction { map: pred_rows.as_deref(), hr: out.hr },
        Target {
            map: s.target.as_deref().filter(|_| pred_rows.is_some()),
            hr: s.hr_bpm.map(scale_hr),
            len: lay.len,
            fs: set.fs,
        },
        &opts.loss.weights,
        &opts.loss.config,
    )?;
    let d_map = match &pred_rows {
        Some(_) => {
            let mut gr = g.map;
            if let Some(mask) = loss_mask {
                for (v, &keep) in gr.iter_mut().zip(mask) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
            Some(lay.scatter_rows(&gr))
        }
        None => None,
    };
    let d_hr = out.hr.map(|_| g.hr);
    if d_map.is_some() || d_hr.is_some_and(|v| v != 0.0) {
        model.backward(&cache, d_map.as_deref(), d_hr)?;
    }
    Ok(b)
}

/// Trains `model` on `set` and returns the per-step loss curve. Each step
/// averages per-sample gradients over a shuffled mini-batch.
pub fn fit(model: &mut Model, set: &SampleSet, opts: &FitOptions<'_>) -> Result<Vec<StepRecord>> {
    let n = set.len();
    if n == 0 {
        return Err(HarnessError::input("empty training set"));
    }
    let batch = opts.train.batch.min(n);
    let budget = opts.train.max_steps.unwrap_or(usize::MAX);
    let use_map = map_trainable(model);
    let mut opt = AdamW::new(opts.train.adamw(), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.train.seed);
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    'epochs: for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            if curve.len() >= budget {
                break 'epochs;
            }
            let step = curve.len() + 1;
            model.store.zero_grad();
            let mut acc = StepRecord { step, epoch, total: 0.0, l_reg: 0.0, l_temp: 0.0, l_freq: 0.0 };
            for &idx in chunk {
                let s = &set.samples[idx];
                let (input, mask) = match &opts.masking {
                    Some(m) => {
                        let (x, mask) = masked_input(set, s, m, stream_of(epoch, idx, n))?;
                        (x, m.masked_only.then_some(mask))
                    }
                    None => (s.input.clone(), None),
                };
                let b = sample_step(model, set, s, &input, mask.as_deref(), opts, use_map)?;
                if !b.total.is_finite() {
                    return Err(HarnessError::Divergence { step, what: format!("loss {} on {}", b.total, s.subject) });
                }
                acc.total += b.total;
                acc.l_reg += b.l_reg;
                acc.l_temp += b.l_temp;
                acc.l_freq += b.l_freq;
            }
            let k = chunk.len() as f64;
            model.store.scale_grad(1.0 / k);
            opt.step(&mut model.store)?;
            acc.total /= k;
            acc.l_reg /= k;
            acc.l_temp /= k;
            acc.l_freq /= k;
            curve.push(acc);
        }
    }
    Ok(curve)
}

/// Heart rate read from a map: spectral peak of the mean of its rows, or
/// the band midpoint when no peak exists.
pub fn map_readout(rows: &[f64], n_rows: usize, fs: f64, band: FreqBand) -> Result<f64> {
    let len = rows.len() / n_rows;
    let mut mean = vec![0.0; len];
    for r in 0..n_rows {
        for (m, v) in mean.iter_mut().zip(&rows[r * len..(r + 1) * len]) {
            *m += v / n_rows as f64;
        }
    }
    match psd_slice(&mean, fs).and_then(|s| dominant_hr(&s, band)) {
        Ok(hr) => Ok(hr),
        Err(CoreError::NoPeak { .. }) => Ok(band_midpoint_bpm()),
        Err(e) => Err(e.into()),
    }
}

/// Predicted heart rate in bpm for every sample.
pub fn predict(model: &Model, set: &SampleSet, readout: Readout, band: FreqBand) -> Result<Vec<f64>> {
    set.samples
        .iter()
        .map(|s| {
            let out = model.forward(&s.input)?;
            let hr = match (readout, out.hr, &out.map) {
                (Readout::Head, Some(u), _) => unscale_hr(u),
                (_, _, Some(m)) => map_readout(&set.layout.unstack(m), set.layout.n_rows, set.fs, band)?,
                (Readout::Map, Some(u), None) => unscale_hr(u),
                (_, None, None) => return Err(HarnessError::config("model has neither HR head nor decoder")),
            };
            if !hr.is_finite() {
                return Err(HarnessError::Divergence { step: 0, what: format!("non-finite prediction for {}", s.subject) });
            }
            Ok(hr)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub subject: String,
    pub start: usize,
    pub pred_bpm: f64,
    pub true_bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<PredictionRecord>,
}

pub fn evaluate(model: &Model, set: &SampleSet, readout: Readout, band: FreqBand) -> Result<Evaluation> {
    let truth = set.truths().ok_or_else(|| HarnessError::input("evaluation set lacks heart-rate labels"))?;
    let pred = predict(model, set, readout, band)?;
    let metrics = compute_metrics(&pred, &truth)?;
    let predictions = set
        .samples
        .iter()
        .zip(pred.iter().zip(&truth))
        .map(|(s, (&p, &t))| PredictionRecord { subject: s.subject.clone(), start: s.start, pred_bpm: p, true_bpm: t })
        .collect();
    Ok(Evaluation { metrics, predictions })
}

/// Mean weighted map loss (`beta * l_temp + gamma * l_freq`) of the masked
/// region, for the model's reconstruction and for the masked input itself.
/// Unmasked elements are taken from the target in both, so only masked
/// patches contribute.
pub fn reconstruction_error(
    model: &Model,
    set: &SampleSet,
    m: &Masking,
    loss: &LossSettings,
    stream: u64,
) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(HarnessError::input("no samples"));
    }
    let lay = &set.layout;
    let map_loss = |rows: &[f64], target: &[f64]| -> Result<f64> {
        let (b, _) = total_loss(
            Prediction { map: Some(rows), hr: None },
            Target { map: Some(target), hr: None, len: lay.len, fs: set.fs },
            &loss.weights,
            &loss.config,
        )?;
        Ok(loss.weights.beta * b.l_temp + loss.weights.gamma * b.l_freq)
    };
    let (mut model_err, mut fill_err) = (0.0, 0.0);
    for (i, s) in set.samples.iter().enumerate() {
        let target = s.target.as_ref().ok_or_else(|| HarnessError::input("sample has no target map"))?;
        let (x, mask) = masked_input(set, s, m, stream + i as u64)?;
        let out = model.forward(&x)?;
        let map = out.map.ok_or_else(|| HarnessError::config("model has no decoder"))?;
        let mut rec = lay.unstack(&map);
        let mut filled = lay.unstack(&x);
        for j in 0..rec.len() {
            if !mask[j] {
                rec[j] = target[j];
                filled[j] = target[j];
            }
        }
        model_err += map_loss(&rec, target)?;
        fill_err += map_loss(&filled, target)?;
    }
    let n = set.len() as f64;
    Ok((model_err / n, fill_err / n))
}
