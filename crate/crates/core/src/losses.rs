//! Map and heart-rate losses with analytic gradients w.r.t. the prediction.
//!
//! * `l_temp`: one minus the mean maximum cross-correlation (MCC) between
//!   matching rows. MCC is the peak of the band-limited, normalised circular
//!   cross-correlation over a bounded lag range, scaled by the share of
//!   spectral power inside the heart-rate band.
//! * `l_freq`: mean over rows of the summed squared PSD difference.
//! * `l_reg`: L1 on the scaled heart rate.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::timeseries::{fft_plan, ifft_plan, mean, psd_slice, FreqBand, TimeSeries};
use crate::{Error, Result};

/// Norms below this are treated as a zero signal.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 5.0, beta: 1.0, gamma: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Which spectrum the in-band power ratio that scales MCC is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CprSource {
    /// In-band share of the cross-spectrum magnitude `|X||Y|`. Symmetric in
    /// its arguments; equals the in-band power ratio when `x == y`.
    #[default]
    CrossSpectrum,
    /// In-band power ratio of the prediction alone.
    Prediction,
}

/// Signals whose standard deviations normalise the cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    #[default]
    Bandpassed,
    Raw,
}

/// PSD normalisation applied before the squared difference in `l_freq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqLossNorm {
    /// PSDs used as estimated.
    #[default]
    Raw,
    /// Each PSD divided by its sum first.
    UnitSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub band: FreqBand,
    /// Largest lag searched by MCC, in seconds.
    pub max_lag_s: f64,
    pub cpr: CprSource,
    pub sigma: SigmaSource,
    pub freq_norm: FreqLossNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            band: FreqBand::HR,
            max_lag_s: 2.0,
            cpr: CprSource::CrossSpectrum,
            sigma: SigmaSource::Bandpassed,
            freq_norm: FreqLossNorm::Raw,
        }
    }
}

/// MCC of one pair of rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MccResult {
    pub value: f64,
    /// Signed lag (in samples) of the maximum: `sum_m x[m + lag] * y[m]`.
    pub lag: isize,
    pub rho: f64,
    pub c_pr: f64,
    /// Set when either signal has zero spread; `value` is then 0.
    pub degenerate: bool,
}

fn band_mask(n: usize, fs: f64, band: FreqBand) -> Vec<bool> {
    (0..n)
        .map(|k| band.contains(k.min(n - k) as f64 * fs / n as f64))
        .collect()
}

fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_plan(x.len()).process(&mut buf);
    buf
}

/// Real part of the unnormalised inverse DFT.
fn ifft_real(spec: &[Complex64]) -> Vec<f64> {
    let mut buf = spec.to_vec();
    ifft_plan(spec.len()).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

fn centred(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Signed lags searched, ascending.
fn lag_range(n: usize, fs: f64, max_lag_s: f64) -> std::ops::RangeInclusive<isize> {
    let l = (max_lag_s * fs).round().max(0.0) as isize;
    let n = n as isize;
    if 2 * l + 1 >= n {
        -((n - 1) / 2)..=n / 2
    } else {
        -l..=l
    }
}

/// MCC of two equal-length signals.
pub fn mcc(x: &TimeSeries, y: &TimeSeries, band: FreqBand) -> Result<f64> {
    if x.len() != y.len() || x.fs() != y.fs() {
        return Err(Error::invalid("mcc needs signals of equal length and rate"));
    }
    band.validate(x.fs())?;
    let cfg = LossConfig { band, ..LossConfig::default() };
    Ok(mcc_forward(x.samples(), y.samples(), x.fs(), &cfg, false).0.value)
}

/// MCC and its gradient with respect to `x`.
pub fn mcc_with_grad(x: &[f64], y: &[f64], fs: f64, cfg: &LossConfig) -> (MccResult, Vec<f64>) {
    let (res, grad) = mcc_forward(x, y, fs, cfg, true);
    (res, grad.unwrap())
}

fn mcc_forward(
    x: &[f64],
    y: &[f64],
    fs: f64,
    cfg: &LossConfig,
    want_grad: bool,
) -> (MccResult, Option<Vec<f64>>) {
    let n = x.len();
    let xc = centred(x);
    let yc = centred(y);
    let xf = fft_real(&xc);
    let yf = fft_real(&yc);
    let mask = band_mask(n, fs, cfg.band);
    let masked = |s: &[Complex64]| -> Vec<Complex64> {
        s.iter()
            .zip(&mask)
            .map(|(v, &m)| if m { *v } else { Complex64::new(0.0, 0.0) })
            .collect()
    };
    let xbf = masked(&xf);
    let ybf = masked(&yf);
    let inv_n = 1.0 / n as f64;
    let xb: Vec<f64> = ifft_real(&xbf).iter().map(|v| v * inv_n).collect();
    let yb: Vec<f64> = ifft_real(&ybf).iter().map(|v| v * inv_n).collect();

    let (sx, sy) = match cfg.sigma {
        SigmaSource::Bandpassed => (norm(&xb), norm(&yb)),
        SigmaSource::Raw => (norm(&xc), norm(&yc)),
    };
    let (nxb, nxc) = (norm(&xb), norm(&xc));
    if sx <= NORM_EPS || sy <= NORM_EPS || norm(&yb) <= NORM_EPS || nxb <= NORM_EPS {
        let res = MccResult { value: 0.0, lag: 0, rho: 0.0, c_pr: 0.0, degenerate: true };
        return (res, want_grad.then(|| vec![0.0; n]));
    }

    let cross: Vec<Complex64> = xbf.iter().zip(&ybf).map(|(a, b)| a * b.conj()).collect();
    let corr: Vec<f64> = ifft_real(&cross).iter().map(|v| v * inv_n).collect();
    let mut best_lag = 0isize;
    let mut best = f64::NEG_INFINITY;
    for lag in lag_range(n, fs, cfg.max_lag_s) {
        let c = corr[lag.rem_euclid(n as isize) as usize];
        if c > best {
            best = c;
            best_lag = lag;
        }
    }
    let rho = best / (sx * sy);

    let (c_pr, cpr_grad) = match cfg.cpr {
        CprSource::CrossSpectrum => cross_spectrum_ratio(&xf, &yf, &mask, want_grad),
        CprSource::Prediction => {
            let c = (nxb / nxc).powi(2);
            let g = want_grad.then(|| {
                let d = nxc * nxc;
                (0..n).map(|i| 2.0 * xb[i] / d - 2.0 * c * xc[i] / d).collect()
            });
            (c, g)
        }
    };
    let res = MccResult { value: c_pr * rho, lag: best_lag, rho, c_pr, degenerate: false };
    if !want_grad {
        return (res, None);
    }

    let lag = best_lag.rem_euclid(n as isize) as usize;
    let own = match cfg.sigma {
        SigmaSource::Bandpassed => &xb,
        SigmaSource::Raw => &xc,
    };
    let mut grad = vec![0.0; n];
    let cpr_grad = cpr_grad.unwrap();
    for j in 0..n {
        let shifted = yb[(j + n - lag) % n];
        let drho = shifted / (sx * sy) - rho * own[j] / (sx * sx);
        grad[j] = c_pr * drho + rho * cpr_grad[j];
    }
    (res, Some(grad))
}

/// `sum_{k in band} |X_k||Y_k| / sum_k |X_k||Y_k|` over the two-sided
/// spectrum, with its gradient w.r.t. the (uncentred) time signal of `X`.
fn cross_spectrum_ratio(
    xf: &[Complex64],
    yf: &[Complex64],
    mask: &[bool],
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let n = xf.len();
    let mags: Vec<(f64, f64)> = xf.iter().zip(yf).map(|(a, b)| (a.norm(), b.norm())).collect();
    let mut inside = 0.0;
    let mut total = 0.0;
    for k in 1..n {
        let p = mags[k].0 * mags[k].1;
        total += p;
        if mask[k] {
            inside += p;
        }
    }
    if total.is_nan() || total <= 0.0 {
        return (0.0, want_grad.then(|| vec![0.0; n]));
    }
    let c = inside / total;
    if !want_grad {
        return (c, None);
    }
    // d|X_k|/dx_j = Re(conj(X_k) e^{-2 pi i k j / n}) / |X_k|, so both sums
    // differentiate to the real part of a forward DFT.
    let coef: Vec<Complex64> = (0..n)
        .map(|k| {
            let (mx, my) = mags[k];
            if k == 0 || mx <= 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let w = if mask[k] { 1.0 - c } else { -c };
            xf[k].conj() * (w * my / (mx * total))
        })
        .collect();
    let mut buf = coef;
    fft_plan(n).process(&mut buf);
    (c, Some(buf.iter().map(|v| v.re).collect()))
}

/// A scalar loss with its gradient w.r.t. the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MapLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_maps(x: &[f64], y: &[f64], len: usize) -> Result<usize> {
    if len == 0 || x.len() != y.len() || !x.len().is_multiple_of(len) || x.is_empty() {
        return Err(Error::invalid(format!(
            "prediction ({}) and target ({}) must be equal-shaped maps with rows of {len}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.len() / len)
}

/// `1 - mean_rows mcc(x_row, y_row)` for row-major maps with rows of `len`.
pub fn l_temp(
    x: &[f64],
    y: &[f64],
    len: usize,
    fs: f64,
    cfg: &LossConfig,
) -> Result<(MapLoss, Vec<MccResult>)> {
    let rows = check_maps(x, y, len)?;
    let mut grad = vec![0.0; x.len()];
    let mut results = Vec::with_capacity(rows);
    let mut sum = 0.0;
    let scale = 1.0 / rows as f64;
    for r in 0..rows {
        let span = r * len..(r + 1) * len;
        let (res, g) = mcc_with_grad(&x[span.clone()], &y[span.clone()], fs, cfg);
        sum += res.value;
        for (o, v) in grad[span].iter_mut().zip(g) {
            *o = -scale * v;
        }
        results.push(res);
    }
    Ok((MapLoss { value: 1.0 - sum * scale, grad }, results))
}

fn normalised_psd(x: &[f64], fs: f64, norm: FreqLossNorm) -> Result<(Vec<f64>, f64)> {
    let p = psd_slice(x, fs)?.power().to_vec();
    match norm {
        FreqLossNorm::Raw => Ok((p, 1.0)),
        FreqLossNorm::UnitSum => {
            let s: f64 = p.iter().sum();
            if s > 0.0 {
                Ok((p.iter().map(|v| v / s).collect(), s))
            } else {
                Ok((p, 0.0))
            }
        }
    }
}

/// Mean over rows of `sum_bins (PSD(x_row) - PSD(y_row))^2`.
pub fn l_freq(x: &[f64], y: &[f64], len: usize, fs: f64, norm: FreqLossNorm) -> Result<MapLoss> {
    let rows = check_maps(x, y, len)?;
    let n = len;
    let half = n / 2;
    let mut grad = vec![0.0; x.len()];
    let mut sum = 0.0;
    let scale = 1.0 / rows as f64;
    for r in 0..rows {
        let span = r * len..(r + 1) * len;
        let xs = &x[span.clone()];
        let (px, sx) = normalised_psd(xs, fs, norm)?;
        let (py, _) = normalised_psd(&y[span.clone()], fs, norm)?;
        let diff: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a - b).collect();
        sum += diff.iter().map(|d| d * d).sum::<f64>();

        // dL/dP_k for the PSD as estimated
        let mut dp: Vec<f64> = diff.iter().map(|d| 2.0 * d * scale).collect();
        if norm == FreqLossNorm::UnitSum {
            if sx > 0.0 {
                let dot: f64 = dp.iter().zip(&px).map(|(g, q)| g * q).sum();
                dp.iter_mut().for_each(|g| *g = (*g - dot) / sx);
            } else {
                dp.iter_mut().for_each(|g| *g = 0.0);
            }
        }
        // P_k = c_k |X_k|^2 / (fs n)  =>  dP_k/dx_j = 2 c_k Re(conj(X_k) e^{-i w_k j}) / (fs n)
        let xf = fft_real(&centred(xs));
        let mut coef = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..=half {
            let c = if k == 0 || (n.is_multiple_of(2) && k == half) { 1.0 } else { 2.0 };
            coef[k] = xf[k].conj() * (2.0 * c * dp[k] / (fs * n as f64));
        }
        fft_plan(n).process(&mut coef);
        let g: Vec<f64> = coef.iter().map(|v| v.re).collect();
        let gm = mean(&g);
        for (o, v) in grad[span].iter_mut().zip(&g) {
            *o = v - gm;
        }
    }
    Ok(MapLoss { value: sum * scale, grad })
}

/// `|pred - label|` and its subgradient (0 at equality).
pub fn l_reg(pred: f64, label: f64) -> (f64, f64) {
    let d = pred - label;
    let g = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    (d.abs(), g)
}

/// Prediction side of a loss evaluation. Either part may be absent (a model
/// without decoder or without heart-rate head).
#[derive(Debug, Clone, Copy)]
pub struct Prediction<'a> {
    pub map: Option<&'a [f64]>,
    pub hr: Option<f64>,
}

/// Target side: a map of the same shape and an optional scaled heart rate
/// (absent for unreliable pseudo labels).
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub map: Option<&'a [f64]>,
    pub hr: Option<f64>,
    pub len: usize,
    pub fs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_reg: f64,
    pub l_temp: f64,
    pub l_freq: f64,
    pub total: f64,
    pub mcc: Vec<f64>,
    pub degenerate_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    /// Gradient w.r.t. the predicted map; empty when no map was predicted.
    pub map: Vec<f64>,
    pub hr: f64,
}

/// `alpha * l_reg + beta * l_temp + gamma * l_freq` with gradients.
/// Components whose inputs are missing contribute zero.
pub fn total_loss(
    pred: Prediction<'_>,
    target: Target<'_>,
    w: &LossWeights,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, LossGrads)> {
    w.validate()?;
    let mut b = LossBreakdown {
        l_reg: 0.0,
        l_temp: 0.0,
        l_freq: 0.0,
        total: 0.0,
        mcc: Vec::new(),
        degenerate_rows: 0,
    };
    let mut grads = LossGrads { map: Vec::new(), hr: 0.0 };

    if let (Some(p), Some(t)) = (pred.hr, target.hr) {
        let (v, g) = l_reg(p, t);
        b.l_reg = v;
        grads.hr = w.alpha * g;
    }
    match (pred.map, target.map) {
        (Some(x), Some(y)) => {
            cfg.band.validate(target.fs)?;
            let (temp, rows) = l_temp(x, y, target.len, target.fs, cfg)?;
            let freq = l_freq(x, y, target.len, target.fs, cfg.freq_norm)?;
            b.l_temp = temp.value;
            b.l_freq = freq.value;
            b.mcc = rows.iter().map(|r| r.value).collect();
            b.degenerate_rows = rows.iter().filter(|r| r.degenerate).count();
            grads.map = temp
                .grad
                .iter()
                .zip(&freq.grad)
                .map(|(a, c)| w.beta * a + w.gamma * c)
                .collect();
        }
        (Some(_), None) => return Err(Error::invalid("predicted map has no target map")),
        _ => {}
    }
    b.total = w.alpha * b.l_reg + w.beta * b.l_temp + w.gamma * b.l_freq;
    Ok((b, grads))
}
