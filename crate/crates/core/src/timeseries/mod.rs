//! Deterministic 1-D signal primitives: band-pass conditioning, min-max
//! normalisation, periodogram spectra and heart-rate readout.

mod filter;
mod spectrum;

use serde::{Deserialize, Serialize};

pub use filter::{BandpassFilter, Biquad, PROTOTYPE_ORDER};
pub use spectrum::{
    band_power_ratio, band_power_ratio_slice, dominant_hr, psd, psd_slice, Spectrum, MIN_PSD_LEN,
};
pub(crate) use spectrum::{fft_plan, ifft_plan};

use crate::{Error, Result};

/// Range guard below which a series is treated as constant by
/// [`minmax_normalize`].
pub const MINMAX_EPS: f64 = 1e-12;

/// A uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    fs: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid(format!(
                "time series needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, fs })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Same sampling rate, new samples. Lengths may differ.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.fs)
    }
}

/// A frequency band in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqBand {
    pub lo: f64,
    pub hi: f64,
}

impl FreqBand {
    /// Heart-rate band, 42-180 bpm.
    pub const HR: FreqBand = FreqBand { lo: 0.7, hi: 3.0 };

    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < fs / 2.0) {
            return Err(Error::invalid(format!(
                "band [{}, {}] Hz is not valid for fs = {fs} Hz",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, freq: f64) -> bool {
        freq >= self.lo && freq <= self.hi
    }

    pub fn bpm_range(&self) -> (f64, f64) {
        (self.lo * 60.0, self.hi * 60.0)
    }
}

impl Default for FreqBand {
    fn default() -> Self {
        Self::HR
    }
}

/// Zero-phase band-pass of a series.
pub fn bandpass(ts: &TimeSeries, band: FreqBand) -> Result<TimeSeries> {
    let out = bandpass_slice(ts.samples(), ts.fs(), band)?;
    Ok(TimeSeries { samples: out, fs: ts.fs })
}

pub fn bandpass_slice(x: &[f64], fs: f64, band: FreqBand) -> Result<Vec<f64>> {
    band.validate(fs)?;
    let filter = BandpassFilter::design(band, fs, PROTOTYPE_ORDER);
    Ok(filter.filtfilt(x))
}

/// Maps the series onto [0, 1]. A series whose range is below
/// [`MINMAX_EPS`] maps to all zeros.
pub fn minmax_normalize(ts: &TimeSeries) -> TimeSeries {
    TimeSeries {
        samples: minmax_slice(ts.samples()),
        fs: ts.fs,
    }
}

pub fn minmax_slice(x: &[f64]) -> Vec<f64> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range.is_nan() || range <= MINMAX_EPS {
        return vec![0.0; x.len()];
    }
    x.iter().map(|&v| (v - lo) / range).collect()
}

/// Band-pass followed by min-max normalisation.
pub fn condition_slice(x: &[f64], fs: f64, band: FreqBand) -> Result<Vec<f64>> {
    Ok(minmax_slice(&bandpass_slice(x, fs, band)?))
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

pub(crate) fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len().max(1) as f64).sqrt()
}
