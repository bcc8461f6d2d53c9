use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{mean, FreqBand, TimeSeries};
use crate::{Error, Result};

/// Shortest series accepted by [`psd`].
pub const MIN_PSD_LEN: usize = 8;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn fft_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn ifft_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// One-sided power spectral density.
///
/// Single-segment periodogram of the mean-removed signal with a rectangular
/// window and density scaling, so `sum(power) * freq_resolution` equals the
/// mean power of the centred signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    power: Vec<f64>,
    freq_resolution: f64,
    fs: f64,
}

impl Spectrum {
    pub fn new(power: Vec<f64>, freq_resolution: f64, fs: f64) -> Result<Self> {
        if power.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("spectrum power must be finite and non-negative"));
        }
        if !(freq_resolution > 0.0 && fs > 0.0) {
            return Err(Error::invalid("spectrum resolution and fs must be positive"));
        }
        Ok(Self { power, freq_resolution, fs })
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn freq_resolution(&self) -> f64 {
        self.freq_resolution
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn freq(&self, bin: usize) -> f64 {
        bin as f64 * self.freq_resolution
    }

    /// Bin indices whose centre frequency lies in `band`.
    pub fn band_bins(&self, band: FreqBand) -> std::ops::RangeInclusive<usize> {
        let lo = (band.lo / self.freq_resolution - 1e-9).ceil().max(0.0) as usize;
        let hi = ((band.hi / self.freq_resolution + 1e-9).floor() as usize)
            .min(self.power.len().saturating_sub(1));
        lo..=hi
    }

    /// Returns a copy with every bin multiplied by `gain` (must be positive).
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            power: self.power.iter().map(|p| p * gain).collect(),
            ..self.clone()
        }
    }
}

pub fn psd(ts: &TimeSeries) -> Result<Spectrum> {
    psd_slice(ts.samples(), ts.fs())
}

pub fn psd_slice(x: &[f64], fs: f64) -> Result<Spectrum> {
    let n = x.len();
    if n < MIN_PSD_LEN {
        return Err(Error::invalid(format!(
            "psd needs at least {MIN_PSD_LEN} samples, got {n}"
        )));
    }
    let m = mean(x);
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(v - m, 0.0)).collect();
    fft_plan(n).process(&mut buf);
    let scale = 1.0 / (fs * n as f64);
    let power = (0..=n / 2)
        .map(|k| {
            let two_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
            two_sided * buf[k].norm_sqr() * scale
        })
        .collect();
    Ok(Spectrum {
        power,
        freq_resolution: fs / n as f64,
        fs,
    })
}

/// Heart rate in bpm at the strongest in-band bin, refined by a three-point
/// parabolic fit over the neighbouring bins.
pub fn dominant_hr(spec: &Spectrum, band: FreqBand) -> Result<f64> {
    band.validate(spec.fs)?;
    let bins = spec.band_bins(band);
    let p = spec.power();
    let mut best: Option<usize> = None;
    for k in bins {
        if best.is_none_or(|b| p[k] > p[b]) {
            best = Some(k);
        }
    }
    let k = match best {
        Some(k) if p[k] > 0.0 => k,
        _ => return Err(Error::NoPeak { lo: band.lo, hi: band.hi }),
    };
    let mut offset = 0.0;
    if k > 0 && k + 1 < p.len() {
        let (a, b, c) = (p[k - 1], p[k], p[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(60.0 * (k as f64 + offset) * spec.freq_resolution)
}

/// Fraction of the centred signal's power that falls inside `band`.
/// Zero total power is defined as ratio 0.
pub fn band_power_ratio(ts: &TimeSeries, band: FreqBand) -> Result<f64> {
    band_power_ratio_slice(ts.samples(), ts.fs(), band)
}

pub fn band_power_ratio_slice(x: &[f64], fs: f64, band: FreqBand) -> Result<f64> {
    let spec = psd_slice(x, fs)?;
    let total: f64 = spec.power.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = spec.power[spec.band_bins(band)].iter().sum();
    Ok((inside / total).clamp(0.0, 1.0))
}
