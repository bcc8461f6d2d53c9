//! Butterworth band-pass design (bilinear transform) and zero-phase
//! forward-backward filtering over second-order sections.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::FreqBand;

/// Prototype low-pass order. The band-pass transform doubles it, so the
/// resulting filter has four poles.
pub const PROTOTYPE_ORDER: usize = 2;

/// One second-order section in transposed direct form II.
/// `a[0]` is implicitly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        let num: f64 = self.b.iter().sum();
        let den: f64 = self.a.iter().sum();
        num / den
    }

    /// State that holds the section at rest for a constant unit input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z[0];
            z[0] = b1 * xi - a1 * y + z[1];
            z[1] = b2 * xi - a2 * y;
            *v = y;
        }
    }

    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z1 * self.a[1] + z2 * self.a[2];
        num / den
    }
}

/// Cascade of second-order sections implementing a Butterworth band-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    sections: Vec<Biquad>,
}

impl BandpassFilter {
    /// Designs the band-pass for `band` at sampling rate `fs`. The band must
    /// already have been validated against `fs`.
    pub fn design(band: FreqBand, fs: f64, order: usize) -> Self {
        assert!(order >= 1, "prototype order must be positive");
        let k = 2.0 * fs;
        let w_lo = k * (PI * band.lo / fs).tan();
        let w_hi = k * (PI * band.hi / fs).tan();
        let bw = w_hi - w_lo;
        let w0_sq = w_lo * w_hi;

        let mut poles = Vec::with_capacity(2 * order);
        for i in 0..order {
            let m = -(order as f64) + 1.0 + 2.0 * i as f64;
            let p = -Complex64::from_polar(1.0, PI * m / (2.0 * order as f64));
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            for s in [(pb + disc) * 0.5, (pb - disc) * 0.5] {
                poles.push((k + s) / (k - s));
            }
        }

        let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
        upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        let mut real: Vec<f64> = poles
            .iter()
            .filter(|p| p.im.abs() <= 1e-12)
            .map(|p| p.re)
            .collect();
        real.sort_by(f64::total_cmp);

        let mut sections: Vec<Biquad> = upper
            .iter()
            .map(|p| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            })
            .collect();
        for pair in real.chunks(2) {
            let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -(r1 + r2), r1 * r2],
            });
        }

        // Unit gain at the (prewarped) geometric centre frequency.
        let w_center = 2.0 * (w0_sq.sqrt() / k).atan();
        let mag: f64 = sections.iter().map(|s| s.response(w_center).norm()).product();
        let per_section = mag.powf(-1.0 / sections.len() as f64);
        for s in &mut sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Magnitude response at `freq` Hz for a single forward pass.
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        self.sections.iter().map(|s| s.response(w).norm()).product()
    }

    fn pad_len(&self, n: usize) -> usize {
        let zero_b2 = self.sections.iter().filter(|s| s.b[2] == 0.0).count();
        let zero_a2 = self.sections.iter().filter(|s| s.a[2] == 0.0).count();
        let ntaps = 2 * self.sections.len() + 1 - zero_b2.min(zero_a2);
        (3 * ntaps).min(n.saturating_sub(1))
    }

    fn run_with_steady_state(&self, x: &mut [f64]) {
        let x0 = x[0];
        let mut scale = x0;
        for s in &self.sections {
            let z = s.step_state();
            s.run(x, [z[0] * scale, z[1] * scale]);
            scale *= s.dc_gain();
        }
    }

    /// Zero-phase forward-backward filtering with odd extension at both ends
    /// and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len(n);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }

        self.run_with_steady_state(&mut ext);
        ext.reverse();
        self.run_with_steady_state(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hr_filter(fs: f64) -> BandpassFilter {
        BandpassFilter::design(FreqBand::new(0.7, 3.0), fs, PROTOTYPE_ORDER)
    }

    #[test]
    fn four_poles_two_sections() {
        let f = hr_filter(30.0);
        assert_eq!(f.sections().len(), 2);
        for s in f.sections() {
            // poles strictly inside the unit circle
            assert!(s.a[2] < 1.0 && s.a[2] > 0.0);
        }
    }

    #[test]
    fn unit_gain_at_centre_and_zero_at_dc_and_nyquist() {
        let fs = 30.0;
        let f = hr_filter(fs);
        let w0 = (2.0 * fs * (PI * 0.7 / fs).tan() * 2.0 * fs * (PI * 3.0 / fs).tan()).sqrt();
        let fc = fs / PI * (w0 / (2.0 * fs)).atan();
        assert!((f.magnitude(fc, fs) - 1.0).abs() < 1e-12);
        assert!(f.magnitude(0.0, fs) < 1e-12);
        assert!(f.magnitude(15.0, fs) < 1e-12);
        // Butterworth: -3 dB at both band edges
        let edge = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f.magnitude(0.7, fs) - edge).abs() < 1e-9);
        assert!((f.magnitude(3.0, fs) - edge).abs() < 1e-9);
    }

    #[test]
    fn matches_reference_design_and_filtfilt() {
        // Golden values from scipy.signal.butter(2, [0.7, 3.0], btype="band",
        // fs=30, output="sos") and sosfiltfilt with default padding.
        let f = hr_filter(30.0);
        let mut dens: Vec<[f64; 3]> = f.sections().iter().map(|s| s.a).collect();
        dens.sort_by(|a, b| a[1].total_cmp(&b[1]));
        let expected = [
            [1.0, -1.826_847_829_047_232, 0.852_418_088_714_560_3],
            [1.0, -1.352_754_963_404_92, 0.594_166_318_843_471_7],
        ];
        for (d, e) in dens.iter().zip(&expected) {
            for j in 0..3 {
                assert!((d[j] - e[j]).abs() < 1e-12, "{d:?} vs {e:?}");
            }
        }

        let x: Vec<f64> = (0..576)
            .map(|i| {
                let t = i as f64 / 30.0;
                (2.0 * PI * 1.2 * t).sin()
                    + 0.3 * (2.0 * PI * 0.2 * t).sin()
                    + 0.5 * (2.0 * PI * 5.0 * t).cos()
            })
            .collect();
        let y = f.filtfilt(&x);
        let golden = [
            (0, 0.089_330_485_775_448_33),
            (1, 0.128_350_487_866_376_98),
            (100, -0.012_211_069_165_977_69),
            (287, 0.136_012_062_406_591_25),
            (575, -0.274_364_329_821_132_7),
        ];
        for (i, v) in golden {
            assert!((y[i] - v).abs() < 1e-10, "y[{i}] = {} vs {v}", y[i]);
        }
    }

    #[test]
    fn constant_input_is_exactly_rejected() {
        let f = hr_filter(30.0);
        let y = f.filtfilt(&[5.0; 200]);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }
}
