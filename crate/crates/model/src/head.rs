//! Heart-rate regression head: 1-D convolution over the token sequence,
//! ReLU, adaptive average pooling to a fixed number of bins and a fully
//! connected layer producing one scalar.

use rand::Rng;

use crate::layers::Linear;
use crate::params::{Init, ParamId, ParameterStore};

pub const CONV_KERNEL: usize = 3;

#[derive(Debug, Clone)]
pub struct HrHead {
    /// `[c_out x c_in x kernel]`.
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub fc: Linear,
    pub c_in: usize,
    pub c_out: usize,
    pub bins: usize,
}

#[derive(Debug, Clone, Default)]
pub struct HeadCache {
    x: Vec<f64>,
    /// Post-ReLU activations, `[len x c_out]`.
    act: Vec<f64>,
    pooled: Vec<f64>,
}

/// Half-open range of sequence positions averaged into bin `j`.
pub fn pool_bin(len: usize, bins: usize, j: usize) -> (usize, usize) {
    ((j * len) / bins, ((j + 1) * len).div_ceil(bins))
}

impl HrHead {
    pub fn new<R: Rng>(s: &mut ParameterStore, name: &str, c_in: usize, c_out: usize, bins: usize, rng: &mut R) -> Self {
        let conv_w = s.add(&format!("{name}.conv.weight"), &[c_out, c_in, CONV_KERNEL], Init::TruncNormal, rng);
        let conv_b = s.add(&format!("{name}.conv.bias"), &[c_out], Init::Zeros, rng);
        let fc = Linear::new(s, &format!("{name}.fc"), c_out * bins, 1, true, rng);
        Self { conv_w, conv_b, fc, c_in, c_out, bins }
    }

    /// Sequence position feeding kernel tap `k` at output `t`, with the
    /// sequence edges replicated.
    fn tap(t: usize, k: usize, len: usize) -> usize {
        (t + k).saturating_sub(1).min(len - 1)
    }

    /// `x` is `[len x c_in]` with `len >= bins`.
    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> (f64, HeadCache) {
        let (ci, co) = (self.c_in, self.c_out);
        let len = x.len() / ci;
        let w = s.value(self.conv_w);
        let b = s.value(self.conv_b);
        let mut act = vec![0.0; len * co];
        for t in 0..len {
            for o in 0..co {
                let mut acc = b[o];
                for k in 0..CONV_KERNEL {
                    let xr = &x[Self::tap(t, k, len) * ci..][..ci];
                    let wr = &w[o * ci * CONV_KERNEL..][..ci * CONV_KERNEL];
                    for i in 0..ci {
                        acc += wr[i * CONV_KERNEL + k] * xr[i];
                    }
                }
                act[t * co + o] = acc.max(0.0);
            }
        }
        let mut pooled = vec![0.0; co * self.bins];
        for j in 0..self.bins {
            let (lo, hi) = pool_bin(len, self.bins, j);
            for o in 0..co {
                let sum: f64 = (lo..hi).map(|t| act[t * co + o]).sum();
                pooled[o * self.bins + j] = sum / (hi - lo) as f64;
            }
        }
        let y = self.fc.forward(s, &pooled)[0];
        (y, HeadCache { x: x.to_vec(), act, pooled })
    }

    /// Accumulates head gradients for `dL/dy = dy` and returns `dL/dx`.
    pub fn backward(&self, s: &mut ParameterStore, c: &HeadCache, dy: f64) -> Vec<f64> {
        let (ci, co) = (self.c_in, self.c_out);
        let len = c.x.len() / ci;
        let dpool = self.fc.backward(s, &c.pooled, &[dy]);
        let mut dz = vec![0.0; len * co];
        for j in 0..self.bins {
            let (lo, hi) = pool_bin(len, self.bins, j);
            for o in 0..co {
                let g = dpool[o * self.bins + j] / (hi - lo) as f64;
                for t in lo..hi {
                    if c.act[t * co + o] > 0.0 {
                        dz[t * co + o] += g;
                    }
                }
            }
        }
        if let Some(gb) = s.grad_slot(self.conv_b) {
            for t in 0..len {
                for o in 0..co {
                    gb[o] += dz[t * co + o];
                }
            }
        }
        if let Some(gw) = s.grad_slot(self.conv_w) {
            for t in 0..len {
                for o in 0..co {
                    let g = dz[t * co + o];
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..CONV_KERNEL {
                        let xr = &c.x[Self::tap(t, k, len) * ci..][..ci];
                        for i in 0..ci {
                            gw[(o * ci + i) * CONV_KERNEL + k] += g * xr[i];
                        }
                    }
                }
            }
        }
        let w = s.value(self.conv_w);
        let mut dx = vec![0.0; c.x.len()];
        for t in 0..len {
            for o in 0..co {
                let g = dz[t * co + o];
                if g == 0.0 {
                    continue;
                }
                for k in 0..CONV_KERNEL {
                    let src = Self::tap(t, k, len);
                    for i in 0..ci {
                        dx[src * ci + i] += g * w[(o * ci + i) * CONV_KERNEL + k];
                    }
                }
            }
        }
        dx
    }
}
