//! Training samples cut from a benchmark: padded stacked MSTmap inputs,
//! rows x T map targets and heart-rate labels.

use pulsebench_core::mstmap::{build_bvpmap_for, build_mstmap, stack_square, window_samples, StackLayout};
use pulsebench_core::rppg::{build_pbvpmap, pseudo_hr, Method};
use pulsebench_core::synth::SubjectRecord;
use pulsebench_core::Error as CoreError;
use pulsebench_model::ModelConfig;

use crate::config::DataConfig;
use crate::error::{HarnessError, Result};

/// What the decoder is asked to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapTarget {
    /// Ground-truth BVP replicated over the map rows.
    Bvp,
    /// The MSTmap itself (masked reconstruction).
    Mst,
    /// Pseudo-BVP map from a traditional method.
    Pbvp(Method),
    None,
}

/// Source of the heart-rate label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrSource {
    Truth,
    Pseudo(Method),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject: String,
    pub start: usize,
    /// Padded stacked image, `height x width x fold`.
    pub input: Vec<f64>,
    /// Target map rows, `n_rows x len`.
    pub target: Option<Vec<f64>>,
    pub hr_bpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// Layout of every input, padded to the model extent.
    pub layout: StackLayout,
    pub fs: f64,
    pub samples: Vec<Sample>,
    /// Windows dropped for lack of a label or pseudo map.
    pub skipped: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Model profile sized for this set's inputs.
    pub fn model_config(&self, profile: &ModelConfig) -> ModelConfig {
        ModelConfig {
            input_hw: [self.layout.height, self.layout.width],
            in_channels: self.layout.fold,
            out_channels: None,
            ..profile.clone()
        }
    }

    pub fn truths(&self) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.hr_bpm).collect()
    }
}

/// Windows of `window` frames every `stride` frames from each subject.
pub struct SampleSpec<'a> {
    pub data: &'a DataConfig,
    pub model: &'a ModelConfig,
    pub window: usize,
    pub stride: usize,
    pub target: MapTarget,
    pub hr: HrSource,
}

fn skippable(e: &CoreError) -> bool {
    matches!(e, CoreError::NoPeak { .. } | CoreError::InvalidInput(_))
}

pub fn build_samples(subjects: &[&SubjectRecord], spec: &SampleSpec<'_>) -> Result<SampleSet> {
    let band = spec.data.band;
    let mut layout: Option<StackLayout> = None;
    let mut fs = None;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for rec in subjects {
        let traces = &rec.traces;
        let fold = spec.data.rows_mode.fold(traces.n_channels());
        let wins = window_samples(traces, spec.window, spec.stride)?;
        for (win, &start) in wins.windows.iter().zip(&wins.starts) {
            let mst = build_mstmap(win, band)?;
            let stacked = stack_square(&mst, spec.data.chunks, fold)?;
            let target = match spec.target {
                MapTarget::Bvp => {
                    let bvp = rec.labels.bvp_window(start, spec.window)?;
                    Some(build_bvpmap_for(&bvp, &mst, band)?.to_f64())
                }
                MapTarget::Mst => Some(mst.to_f64()),
                MapTarget::Pbvp(m) => match build_pbvpmap(win, m, band) {
                    Ok(p) => Some(p.map.to_f64()),
                    Err(e) if skippable(&e) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                },
                MapTarget::None => None,
            };
            let hr_bpm = match spec.hr {
                HrSource::Truth => match rec.labels.window_hr(start, spec.window) {
                    Some(hr) => Some(hr),
                    None => {
                        skipped += 1;
                        continue;
                    }
                },
                HrSource::Pseudo(m) => pseudo_hr(win, m)?.usable_hr(),
                HrSource::None => None,
            };
            let lay = layout.get_or_insert_with(|| {
                let (h, w) = (spec.model.fit_extent(stacked.height()), spec.model.fit_extent(stacked.width()));
                stacked.layout().padded(h, w).expect("padding to a larger extent")
            });
            if lay.n_rows != mst.n_rows() || lay.fold != fold {
                return Err(HarnessError::input(format!(
                    "subject {} has a different map shape than earlier subjects",
                    rec.labels.subject_id
                )));
            }
            let padded = stacked.pad_to(lay.height, lay.width)?;
            fs.get_or_insert(win.fs());
            samples.push(Sample {
                subject: rec.labels.subject_id.clone(),
                start,
                input: padded.to_f64(),
                target,
                hr_bpm,
            });
        }
    }
    let layout = layout.ok_or_else(|| HarnessError::input("no usable windows in the selected subjects"))?;
    Ok(SampleSet { layout, fs: fs.unwrap_or(0.0), samples, skipped })
}
