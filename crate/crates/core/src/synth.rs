//! Synthetic pulse waveforms and ROI colour traces with known heart rate.
//!
//! A beat is a fixed three-harmonic template (amplitudes 1.0, 0.35, 0.2)
//! whose phase offsets put a secondary hump after the systolic peak. Beats
//! are laid end to end with a jittered period, so the waveform is
//! quasi-periodic and the true rate is `60 / mean(period)`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mstmap::{write_traces, RoiTraceSet};
use crate::timeseries::{FreqBand, TimeSeries};
use crate::{Error, Result};

pub const HARMONIC_AMPS: [f64; 3] = [1.0, 0.35, 0.2];
pub const HARMONIC_PHASES: [f64; 3] = [0.0, -0.9, -1.8];

/// Mean skin colour levels (R, G, B) and relative pulse strengths.
pub const SKIN_BASELINE: [f64; 3] = [150.0, 110.0, 90.0];
pub const SKIN_PULSE: [f64; 3] = [0.35, 1.0, 0.55];

/// Colour channels carried by generated traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSet {
    Rgb,
    /// RGB followed by BT.601 Y, U, V derived from it.
    #[default]
    Rgbyuv,
}

impl ChannelSet {
    pub fn names(self) -> Vec<String> {
        let n: &[&str] = match self {
            ChannelSet::Rgb => &["R", "G", "B"],
            ChannelSet::Rgbyuv => &["R", "G", "B", "Y", "U", "V"],
        };
        n.iter().map(|s| s.to_string()).collect()
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        match self {
            ChannelSet::Rgb => 3,
            ChannelSet::Rgbyuv => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub hr_bpm: f64,
    pub fs: f64,
    pub frames: usize,
    pub harmonic_amps: Vec<f64>,
    /// Standard deviation of the beat period, in seconds.
    pub hrv_jitter: f64,
    pub noise_std: f64,
    pub drift: f64,
    /// Drift frequency in Hz; drawn from 0.2-0.4 Hz when unset.
    pub drift_hz: Option<f64>,
    /// R, G, B pulse strengths.
    pub pulse_strength_per_channel: Vec<f64>,
    pub channels: ChannelSet,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            hr_bpm: 72.0,
            fs: 30.0,
            frames: 576,
            harmonic_amps: HARMONIC_AMPS.to_vec(),
            hrv_jitter: 0.02,
            noise_std: 0.1,
            drift: 1.0,
            drift_hz: None,
            pulse_strength_per_channel: SKIN_PULSE.to_vec(),
            channels: ChannelSet::Rgbyuv,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = FreqBand::HR.bpm_range();
        if !(lo..=hi).contains(&self.hr_bpm) {
            return Err(Error::invalid(format!("hr {} bpm outside [{lo}, {hi}]", self.hr_bpm)));
        }
        if self.fs.is_nan() || self.fs < 4.0 * FreqBand::HR.hi {
            return Err(Error::invalid(format!("fs {} Hz too low for the heart-rate band", self.fs)));
        }
        if self.frames < 2 {
            return Err(Error::invalid("at least two frames are required"));
        }
        if self.harmonic_amps.is_empty() || self.harmonic_amps.len() > HARMONIC_PHASES.len() {
            return Err(Error::invalid("one to three harmonic amplitudes are supported"));
        }
        if self.pulse_strength_per_channel.len() != 3 {
            return Err(Error::invalid("pulse strengths are given for R, G and B"));
        }
        let nonneg = [self.hrv_jitter, self.noise_std, self.drift];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("jitter, noise and drift must be non-negative"));
        }
        Ok(())
    }
}

/// Generated pulse with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBvp {
    pub bvp: TimeSeries,
    pub hr_bpm: f64,
    /// Beat onset times in seconds; the first may be negative.
    pub beat_times: Vec<f64>,
}

fn beat_value(phase: f64, amps: &[f64]) -> f64 {
    amps.iter()
        .zip(HARMONIC_PHASES)
        .enumerate()
        .map(|(h, (a, p))| a * ((h + 1) as f64 * phase + p).sin())
        .sum()
}

/// Onset times covering `[0, duration]` with jittered periods, plus the
/// period of every beat.
fn beat_onsets(rng: &mut ChaCha8Rng, hr_bpm: f64, jitter: f64, duration: f64) -> (Vec<f64>, Vec<f64>) {
    let period = 60.0 / hr_bpm;
    // keep every beat inside the heart-rate band
    let (min_p, max_p) = (1.0 / FreqBand::HR.hi, 1.0 / FreqBand::HR.lo);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut t = -rng.gen_range(0.0..period);
    let mut onsets = Vec::new();
    let mut periods = Vec::new();
    while t <= duration {
        let p = (period + jitter * normal.sample(rng)).clamp(min_p, max_p);
        onsets.push(t);
        periods.push(p);
        t += p;
    }
    (onsets, periods)
}

fn render(onsets: &[f64], periods: &[f64], amps: &[f64], fs: f64, frames: usize) -> Vec<f64> {
    let mut beat = 0;
    (0..frames)
        .map(|k| {
            let t = k as f64 / fs;
            while beat + 1 < onsets.len() && onsets[beat + 1] <= t {
                beat += 1;
            }
            let phase = 2.0 * PI * (t - onsets[beat]) / periods[beat];
            beat_value(phase, amps)
        })
        .collect()
}

/// Mean-period heart rate of the beats whose onsets fall in `[start, end)`.
/// Falls back to the beat covering `start` when no onset lies inside.
pub fn window_hr(onsets: &[f64], start: f64, end: f64) -> Option<f64> {
    if onsets.len() < 2 {
        return None;
    }
    let periods: Vec<f64> = onsets
        .windows(2)
        .filter(|w| w[0] >= start && w[0] < end)
        .map(|w| w[1] - w[0])
        .collect();
    if periods.is_empty() {
        let w = onsets.windows(2).find(|w| w[0] <= start && w[1] > start)?;
        return Some(60.0 / (w[1] - w[0]));
    }
    Some(60.0 * periods.len() as f64 / periods.iter().sum::<f64>())
}

fn gen_bvp_with(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SynthBvp> {
    cfg.validate()?;
    let duration = cfg.frames as f64 / cfg.fs;
    let (mut onsets, periods) = beat_onsets(rng, cfg.hr_bpm, cfg.hrv_jitter, duration);
    let samples = render(&onsets, &periods, &cfg.harmonic_amps, cfg.fs, cfg.frames);
    // closing onset so every rendered beat has a measurable period
    onsets.push(onsets.last().unwrap() + periods.last().unwrap());
    let hr_bpm = window_hr(&onsets, 0.0, duration).unwrap_or(cfg.hr_bpm);
    Ok(SynthBvp {
        bvp: TimeSeries::new(samples, cfg.fs)?,
        hr_bpm,
        beat_times: onsets,
    })
}

pub fn gen_bvp(cfg: &SynthConfig) -> Result<SynthBvp> {
    gen_bvp_with(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Traces with their generating pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTraces {
    pub traces: RoiTraceSet,
    pub truth: SynthBvp,
}

fn yuv(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.14713 * r - 0.28886 * g + 0.436 * b,
        0.615 * r - 0.51499 * g - 0.10001 * b,
    ]
}

/// Per ROI and channel: `baseline * roi_gain + strength * roi_pulse * bvp +
/// drift * sin(2 pi f_d t + phi) + noise`. The drift is shared by every ROI
/// and channel.
pub fn gen_traces(cfg: &SynthConfig, n_rois: usize, subject_id: &str) -> Result<SynthTraces> {
    if n_rois == 0 {
        return Err(Error::invalid("at least one ROI is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = gen_bvp_with(cfg, &mut rng)?;
    let drift_hz = cfg.drift_hz.unwrap_or_else(|| rng.gen_range(0.2..0.4));
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = cfg.frames;
    let drift: Vec<f64> = (0..n)
        .map(|k| cfg.drift * (2.0 * PI * drift_hz * k as f64 / cfg.fs + drift_phase).sin())
        .collect();
    let bvp = truth.bvp.samples();

    let n_ch = cfg.channels.len();
    let mut values = vec![0.0; n_rois * n_ch * n];
    for roi in 0..n_rois {
        let gain = rng.gen_range(0.9..1.1);
        let pulse_gain = rng.gen_range(0.6..1.2);
        let mut rgb = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (c, ch) in rgb.iter_mut().enumerate() {
            let base = SKIN_BASELINE[c] * gain;
            let strength = cfg.pulse_strength_per_channel[c] * pulse_gain;
            for k in 0..n {
                ch[k] = base + strength * bvp[k] + drift[k] + cfg.noise_std * normal.sample(&mut rng);
            }
        }
        for (c, ch) in rgb.iter().enumerate() {
            let start = (roi * n_ch + c) * n;
            values[start..start + n].copy_from_slice(ch);
        }
        if n_ch == 6 {
            for k in 0..n {
                let v = yuv(rgb[0][k], rgb[1][k], rgb[2][k]);
                for j in 0..3 {
                    values[(roi * n_ch + 3 + j) * n + k] = v[j];
                }
            }
        }
    }
    let traces = RoiTraceSet::new(values, n_rois, n_ch, cfg.fs, subject_id.to_string(), cfg.channels.names())?;
    Ok(SynthTraces { traces, truth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n_subjects: usize,
    pub windows_per_subject: usize,
    pub window_frames: usize,
    pub fs: f64,
    pub n_rois: usize,
    pub channels: ChannelSet,
    pub hr_range: (f64, f64),
    pub hrv_jitter: f64,
    /// Per-subject noise level is drawn uniformly from this range.
    pub noise_range: (f64, f64),
    pub drift: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            windows_per_subject: 4,
            window_frames: 576,
            fs: 30.0,
            n_rois: 6,
            channels: ChannelSet::Rgbyuv,
            hr_range: (50.0, 150.0),
            hrv_jitter: 0.02,
            noise_range: (0.1, 0.6),
            drift: 1.0,
            seed: 0,
        }
    }
}

/// Ground-truth labels stored next to a subject's traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLabels {
    pub subject_id: String,
    pub fs: f64,
    /// Rate the subject's beats were drawn around.
    pub hr_bpm: f64,
    pub beat_times: Vec<f64>,
    pub bvp: Vec<f64>,
}

impl SubjectLabels {
    /// Ground-truth rate of the window starting at frame `start`.
    pub fn window_hr(&self, start: usize, frames: usize) -> Option<f64> {
        let s = start as f64 / self.fs;
        window_hr(&self.beat_times, s, s + frames as f64 / self.fs)
    }

    pub fn bvp_window(&self, start: usize, frames: usize) -> Result<TimeSeries> {
        let end = start + frames;
        if end > self.bvp.len() {
            return Err(Error::invalid("bvp window exceeds the recording"));
        }
        TimeSeries::new(self.bvp[start..end].to_vec(), self.fs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub traces: RoiTraceSet,
    pub labels: SubjectLabels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub subjects: Vec<SubjectRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: BenchmarkConfig,
    subjects: Vec<String>,
}

pub fn subject_id(i: usize) -> String {
    format!("subject-{i:03}")
}

pub fn gen_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    if cfg.n_subjects == 0 || cfg.windows_per_subject == 0 {
        return Err(Error::invalid("benchmark needs subjects and windows"));
    }
    let (lo, hi) = cfg.hr_range;
    let (nlo, nhi) = cfg.noise_range;
    if !(lo < hi && nlo <= nhi) {
        return Err(Error::invalid("empty heart-rate or noise range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    for i in 0..cfg.n_subjects {
        let hr = rng.gen_range(lo..hi);
        let noise = if nlo < nhi { rng.gen_range(nlo..nhi) } else { nlo };
        let seed = rng.gen();
        let id = subject_id(i);
        let sc = SynthConfig {
            hr_bpm: hr,
            fs: cfg.fs,
            frames: cfg.window_frames * cfg.windows_per_subject,
            hrv_jitter: cfg.hrv_jitter,
            noise_std: noise,
            drift: cfg.drift,
            channels: cfg.channels,
            seed,
            ..SynthConfig::default()
        };
        let st = gen_traces(&sc, cfg.n_rois, &id)?;
        subjects.push(SubjectRecord {
            traces: st.traces,
            labels: SubjectLabels {
                subject_id: id,
                fs: cfg.fs,
                hr_bpm: hr,
                beat_times: st.truth.beat_times,
                bvp: st.truth.bvp.into_samples(),
            },
        });
    }
    Ok(Benchmark { config: cfg.clone(), subjects })
}

fn labels_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.labels.json"))
}

/// Writes `<id>.csv` (+ `<id>.json` sidecar), `<id>.labels.json` per subject
/// and a `benchmark.json` manifest.
pub fn write_benchmark(dir: &Path, bench: &Benchmark) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut ids = Vec::new();
    for s in &bench.subjects {
        let id = &s.labels.subject_id;
        write_traces(&dir.join(format!("{id}.csv")), &s.traces)?;
        std::fs::write(labels_path(dir, id), serde_json::to_vec(&s.labels)?)?;
        ids.push(id.clone());
    }
    let manifest = Manifest { config: bench.config.clone(), subjects: ids };
    std::fs::write(dir.join("benchmark.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_benchmark(dir: &Path) -> Result<Benchmark> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("benchmark.json"))?)?;
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for id in &manifest.subjects {
        let traces = crate::mstmap::read_traces(&dir.join(format!("{id}.csv")))?;
        let labels: SubjectLabels = serde_json::from_slice(&std::fs::read(labels_path(dir, id))?)?;
        subjects.push(SubjectRecord { traces, labels });
    }
    Ok(Benchmark { config: manifest.config, subjects })
}
