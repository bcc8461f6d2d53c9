//! Classical remote-PPG estimators (GREEN, CHROM, POS, LGI), pseudo heart
//! rate labels and pseudo-BVP maps built from them.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mstmap::{roi_subsets, MapKind, RoiTraceSet, SignalMap};
use crate::timeseries::{
    bandpass_slice, condition_slice, dominant_hr, mean, psd_slice, std_dev, FreqBand, Spectrum,
    TimeSeries,
};
use crate::{Error, Result};

/// Window length for CHROM/POS processing and CHROM's running-mean
/// normalisation.
pub const WINDOW_SECONDS: f64 = 1.6;

/// Labels below this confidence are treated as unreliable.
pub const MIN_CONFIDENCE: f64 = 0.2;

/// Half-width of the frequency windows around the detected rate and its
/// first harmonic that count as pulse power for the confidence score.
pub const CONFIDENCE_HALF_WIDTH_HZ: f64 = 0.1;

const SIGMA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Green,
    Chrom,
    Pos,
    Lgi,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Green, Method::Chrom, Method::Pos, Method::Lgi];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Green => "GREEN",
            Method::Chrom => "CHROM",
            Method::Pos => "POS",
            Method::Lgi => "LGI",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GREEN" => Ok(Method::Green),
            "CHROM" => Ok(Method::Chrom),
            "POS" => Ok(Method::Pos),
            "LGI" => Ok(Method::Lgi),
            _ => Err(Error::invalid(format!("unknown rPPG method {s:?}"))),
        }
    }
}

/// Mean skin colour per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbTrace {
    r: Vec<f64>,
    g: Vec<f64>,
    b: Vec<f64>,
    fs: f64,
}

impl RgbTrace {
    pub fn new(r: Vec<f64>, g: Vec<f64>, b: Vec<f64>, fs: f64) -> Result<Self> {
        if r.len() != g.len() || g.len() != b.len() {
            return Err(Error::invalid("r, g and b traces differ in length"));
        }
        // reuse the series validation for length, fs and finiteness
        for c in [&r, &g, &b] {
            TimeSeries::new(c.clone(), fs)?;
        }
        Ok(Self { r, g, b, fs })
    }

    pub fn from_series(r: &TimeSeries, g: &TimeSeries, b: &TimeSeries) -> Result<Self> {
        if r.fs() != g.fs() || g.fs() != b.fs() {
            return Err(Error::invalid("r, g and b traces differ in sampling rate"));
        }
        Self::new(r.samples().to_vec(), g.samples().to_vec(), b.samples().to_vec(), r.fs())
    }

    /// Averages the RGB channels of `traces` over `rois`.
    pub fn from_rois(traces: &RoiTraceSet, rois: &[usize]) -> Result<Self> {
        if rois.is_empty() || rois.iter().any(|&r| r >= traces.n_rois()) {
            return Err(Error::invalid(format!("bad ROI selection {rois:?}")));
        }
        let [ri, gi, bi] = rgb_channels(traces)?;
        Self::new(
            traces.subset_mean(rois, ri),
            traces.subset_mean(rois, gi),
            traces.subset_mean(rois, bi),
            traces.fs(),
        )
    }

    pub fn from_all_rois(traces: &RoiTraceSet) -> Result<Self> {
        let all: Vec<usize> = (0..traces.n_rois()).collect();
        Self::from_rois(traces, &all)
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    fn channels(&self) -> [&[f64]; 3] {
        [&self.r, &self.g, &self.b]
    }
}

/// Indices of the R, G and B channels, by name when available, otherwise
/// the first three channels.
pub fn rgb_channels(traces: &RoiTraceSet) -> Result<[usize; 3]> {
    let named = ["R", "G", "B"].map(|n| traces.channel_index(n));
    if let [Some(r), Some(g), Some(b)] = named {
        return Ok([r, g, b]);
    }
    if traces.n_channels() >= 3 {
        return Ok([0, 1, 2]);
    }
    Err(Error::invalid("trace set has no R, G and B channels"))
}

/// Output of one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseEstimate {
    pub signal: TimeSeries,
    /// Windows left out because a projection denominator vanished.
    pub skipped_windows: usize,
}

pub fn estimate(t: &RgbTrace, method: Method, band: FreqBand) -> Result<PulseEstimate> {
    band.validate(t.fs)?;
    let (samples, skipped_windows) = match method {
        Method::Green => (green_raw(t, band)?, 0),
        Method::Chrom => chrom_raw(t, band)?,
        Method::Pos => pos_raw(t, band)?,
        Method::Lgi => (lgi_raw(t, band)?, 0),
    };
    Ok(PulseEstimate {
        signal: TimeSeries::new(samples, t.fs)?,
        skipped_windows,
    })
}

pub fn green(t: &RgbTrace) -> Result<TimeSeries> {
    Ok(estimate(t, Method::Green, FreqBand::HR)?.signal)
}

pub fn chrom(t: &RgbTrace) -> Result<TimeSeries> {
    Ok(estimate(t, Method::Chrom, FreqBand::HR)?.signal)
}

pub fn pos(t: &RgbTrace) -> Result<TimeSeries> {
    Ok(estimate(t, Method::Pos, FreqBand::HR)?.signal)
}

pub fn lgi(t: &RgbTrace) -> Result<TimeSeries> {
    Ok(estimate(t, Method::Lgi, FreqBand::HR)?.signal)
}

fn centred(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

fn green_raw(t: &RgbTrace, band: FreqBand) -> Result<Vec<f64>> {
    let g = bandpass_slice(&centred(&t.g), t.fs, band)?;
    Ok(centred(&g))
}

/// Window length in samples: even, at least 4 and no longer than the trace.
fn window_len(n: usize, fs: f64) -> usize {
    let l = ((WINDOW_SECONDS * fs).round() as usize).max(4);
    let l = l + l % 2;
    if l <= n {
        l
    } else {
        n - n % 2
    }
}

/// Window starts with 50% overlap; a final window is aligned to the end
/// when the regular grid leaves samples uncovered.
fn window_starts(n: usize, l: usize) -> Vec<usize> {
    let hop = (l / 2).max(1);
    let mut starts: Vec<usize> = (0..=(n - l) / hop).map(|i| i * hop).collect();
    if starts.last().is_none_or(|&s| s + l < n) {
        starts.push(n - l);
    }
    starts
}

/// Hann taper sampled at half-integer points so it never vanishes.
fn taper(l: usize) -> Vec<f64> {
    (0..l)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / l as f64).cos())
        .collect()
}

/// Weighted overlap-add of per-window segments. `segment` returns `None`
/// for windows that must be skipped.
fn overlap_add<F>(n: usize, fs: f64, mut segment: F) -> (Vec<f64>, usize)
where
    F: FnMut(usize, usize) -> Option<Vec<f64>>,
{
    let l = window_len(n, fs);
    let w = taper(l);
    let mut out = vec![0.0; n];
    let mut weight = vec![0.0; n];
    let mut skipped = 0;
    for s in window_starts(n, l) {
        match segment(s, l) {
            Some(seg) => {
                for i in 0..l {
                    out[s + i] += w[i] * seg[i];
                    weight[s + i] += w[i];
                }
            }
            None => skipped += 1,
        }
    }
    for (o, &wt) in out.iter_mut().zip(&weight) {
        if wt > SIGMA_EPS {
            *o /= wt;
        }
    }
    (out, skipped)
}

/// Divides by a centred running mean, giving zero-mean relative variation.
fn running_normalise(x: &[f64], l: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    let half = l / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let m = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            if m.abs() > SIGMA_EPS {
                x[i] / m - 1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn chrom_raw(t: &RgbTrace, band: FreqBand) -> Result<(Vec<f64>, usize)> {
    let n = t.len();
    let l = window_len(n, t.fs);
    let [r, g, b] = t.channels().map(|c| running_normalise(c, l));
    let x: Vec<f64> = (0..n).map(|i| 3.0 * r[i] - 2.0 * g[i]).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.5 * r[i] + g[i] - 1.5 * b[i]).collect();
    let xf = bandpass_slice(&x, t.fs, band)?;
    let yf = bandpass_slice(&y, t.fs, band)?;
    Ok(overlap_add(n, t.fs, |s, l| {
        let (xs, ys) = (&xf[s..s + l], &yf[s..s + l]);
        let sy = std_dev(ys);
        if sy <= SIGMA_EPS {
            return None;
        }
        let alpha = std_dev(xs) / sy;
        Some(centred(&xs.iter().zip(ys).map(|(a, b)| a - alpha * b).collect::<Vec<_>>()))
    }))
}

fn pos_raw(t: &RgbTrace, band: FreqBand) -> Result<(Vec<f64>, usize)> {
    let n = t.len();
    let (h, skipped) = overlap_add(n, t.fs, |s, l| {
        let mut norm = [0usize; 3].map(|_| Vec::new());
        for (dst, c) in norm.iter_mut().zip(t.channels()) {
            let seg = &c[s..s + l];
            let m = mean(seg);
            if m.abs() <= SIGMA_EPS {
                return None;
            }
            *dst = seg.iter().map(|v| v / m).collect();
        }
        let [r, g, b] = &norm;
        let s1: Vec<f64> = (0..l).map(|i| g[i] - b[i]).collect();
        let s2: Vec<f64> = (0..l).map(|i| -2.0 * r[i] + g[i] + b[i]).collect();
        let sd2 = std_dev(&s2);
        if sd2 <= SIGMA_EPS {
            return None;
        }
        let a = std_dev(&s1) / sd2;
        Some(centred(&(0..l).map(|i| s1[i] + a * s2[i]).collect::<Vec<_>>()))
    });
    Ok((bandpass_slice(&h, t.fs, band)?, skipped))
}

/// Leading eigenvector of a symmetric positive semi-definite 3x3 matrix.
fn leading_eigenvector(m: [[f64; 3]; 3]) -> [f64; 3] {
    let mut v = [1.0, 1.0, 1.0];
    for _ in 0..500 {
        let mut w = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                w[i] += m[i][j] * v[j];
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            break;
        }
        let next = w.map(|x| x / norm);
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / norm)
}

fn lgi_raw(t: &RgbTrace, band: FreqBand) -> Result<Vec<f64>> {
    let c = t.channels();
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = c[i].iter().zip(c[j]).map(|(a, b)| a * b).sum();
        }
    }
    let u = leading_eigenvector(cov);
    // green row of (I - u u^T) applied to the colour matrix
    let p = [-u[1] * u[0], 1.0 - u[1] * u[1], -u[1] * u[2]];
    let s: Vec<f64> = (0..t.len())
        .map(|k| p[0] * c[0][k] + p[1] * c[1][k] + p[2] * c[2][k])
        .collect();
    bandpass_slice(&centred(&s), t.fs, band)
}

/// Share of a pulse signal's power that sits within
/// [`CONFIDENCE_HALF_WIDTH_HZ`] of `f0` or of its first harmonic.
pub fn pulse_confidence(spec: &Spectrum, f0: f64) -> f64 {
    let total: f64 = spec.power().iter().sum();
    if total.is_nan() || total <= 0.0 {
        return 0.0;
    }
    let near = |f: f64| {
        (f - f0).abs() <= CONFIDENCE_HALF_WIDTH_HZ || (f - 2.0 * f0).abs() <= CONFIDENCE_HALF_WIDTH_HZ
    };
    let inside: f64 = spec
        .power()
        .iter()
        .enumerate()
        .filter(|(k, _)| near(spec.freq(*k)))
        .map(|(_, p)| p)
        .sum();
    (inside / total).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    /// Detected rate; `None` when the spectrum had no in-band peak.
    pub hr_bpm: Option<f64>,
    pub method: Method,
    pub confidence: f64,
    pub reliable: bool,
    pub skipped_windows: usize,
}

impl PseudoLabel {
    /// Heart rate of a reliable label.
    pub fn usable_hr(&self) -> Option<f64> {
        self.hr_bpm.filter(|_| self.reliable)
    }
}

/// Pseudo heart rate for a pulse signal already produced by an estimator.
pub fn label_signal(signal: &TimeSeries, method: Method, skipped: usize, band: FreqBand) -> Result<PseudoLabel> {
    let spec = psd_slice(signal.samples(), signal.fs())?;
    let (hr_bpm, confidence) = match dominant_hr(&spec, band) {
        Ok(hr) => (Some(hr), pulse_confidence(&spec, hr / 60.0)),
        Err(Error::NoPeak { .. }) => (None, 0.0),
        Err(e) => return Err(e),
    };
    let reliable = hr_bpm.is_some() && confidence >= MIN_CONFIDENCE;
    Ok(PseudoLabel { hr_bpm, method, confidence, reliable, skipped_windows: skipped })
}

/// Runs `method` on the all-ROI mean trace and reads the heart rate.
pub fn pseudo_hr(traces: &RoiTraceSet, method: Method) -> Result<PseudoLabel> {
    pseudo_hr_over(traces, None, method, FreqBand::HR)
}

/// Like [`pseudo_hr`] with an explicit ROI selection (`None` = all ROIs).
pub fn pseudo_hr_over(
    traces: &RoiTraceSet,
    rois: Option<&[usize]>,
    method: Method,
    band: FreqBand,
) -> Result<PseudoLabel> {
    let rgb = match rois {
        Some(r) => RgbTrace::from_rois(traces, r)?,
        None => RgbTrace::from_all_rois(traces)?,
    };
    let est = estimate(&rgb, method, band)?;
    label_signal(&est.signal, method, est.skipped_windows, band)
}

/// Pseudo-BVP map plus the subsets that fell back to the all-ROI signal.
#[derive(Debug, Clone, PartialEq)]
pub struct PbvpMap {
    pub map: SignalMap,
    pub fallback_subsets: Vec<usize>,
}

/// One conditioned pseudo-pulse row per ROI subset (binary counting order),
/// replicated across the colour channels so the shape matches the MSTmap.
pub fn build_pbvpmap(traces: &RoiTraceSet, method: Method, band: FreqBand) -> Result<PbvpMap> {
    let subsets = roi_subsets(traces.n_rois());
    let n_ch = traces.n_channels();
    let t = traces.len();
    let row_for = |rois: &[usize]| -> Result<Vec<f64>> {
        let est = estimate(&RgbTrace::from_rois(traces, rois)?, method, band)?;
        let row = condition_slice(est.signal.samples(), traces.fs(), band)?;
        if row.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("degenerate pseudo pulse"));
        }
        dominant_hr(&psd_slice(&row, traces.fs())?, band)?;
        Ok(row)
    };
    let all: Vec<usize> = (0..traces.n_rois()).collect();
    let mut fallback_row: Option<Vec<f64>> = None;
    let mut fallback_subsets = Vec::new();
    let mut data = Vec::with_capacity(subsets.len() * n_ch * t);
    let mut row_index = Vec::with_capacity(subsets.len() * n_ch);
    for (i, subset) in subsets.iter().enumerate() {
        let row = match row_for(subset) {
            Ok(r) => r,
            Err(_) => {
                fallback_subsets.push(i);
                if fallback_row.is_none() {
                    let est = estimate(&RgbTrace::from_rois(traces, &all)?, method, band)?;
                    fallback_row = Some(condition_slice(est.signal.samples(), traces.fs(), band)?);
                }
                fallback_row.clone().unwrap()
            }
        };
        for c in 0..n_ch {
            data.extend(row.iter().map(|&v| v as f32));
            row_index.push(crate::mstmap::RowLabel { subset: subset.clone(), channel: c });
        }
    }
    let map = SignalMap::new(MapKind::Pbvp, row_index.len(), t, traces.fs(), data, row_index)?;
    Ok(PbvpMap { map, fallback_subsets })
}
