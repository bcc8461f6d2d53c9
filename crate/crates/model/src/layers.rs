//! Token-wise layers over row-major `[n_tokens x dim]` buffers, each with a
//! hand-written backward pass that accumulates parameter gradients into the
//! store and returns the input gradient.

use rand::Rng;

use crate::params::{Init, ParamId, ParameterStore};

pub const LN_EPS: f64 = 1e-5;

/// Dot product with four independent accumulators so the loop vectorises.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = x W^T + b` with `W` stored `[out x in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        s: &mut ParameterStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = s.add(&format!("{name}.weight"), &[d_out, d_in], Init::TruncNormal, rng);
        let b = bias.then(|| s.add(&format!("{name}.bias"), &[d_out], Init::Zeros, rng));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> Vec<f64> {
        let n = x.len() / self.d_in;
        debug_assert_eq!(n * self.d_in, x.len());
        let w = s.value(self.w);
        let mut y = vec![0.0; n * self.d_out];
        for (xr, yr) in x.chunks_exact(self.d_in).zip(y.chunks_exact_mut(self.d_out)) {
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = dot(xr, &w[o * self.d_in..(o + 1) * self.d_in]);
            }
        }
        if let Some(b) = self.b {
            let b = s.value(b);
            for yr in y.chunks_exact_mut(self.d_out) {
                axpy(1.0, b, yr);
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns `dx`.
    pub fn backward(&self, s: &mut ParameterStore, x: &[f64], dy: &[f64]) -> Vec<f64> {
        self.accumulate(s, x, dy);
        self.input_grad(s, dy)
    }

    pub fn accumulate(&self, s: &mut ParameterStore, x: &[f64], dy: &[f64]) {
        if let Some(gw) = s.grad_slot(self.w) {
            for (xr, dyr) in x.chunks_exact(self.d_in).zip(dy.chunks_exact(self.d_out)) {
                for (o, &g) in dyr.iter().enumerate() {
                    if g != 0.0 {
                        axpy(g, xr, &mut gw[o * self.d_in..(o + 1) * self.d_in]);
                    }
                }
            }
        }
        if let Some(b) = self.b {
            if let Some(gb) = s.grad_slot(b) {
                for dyr in dy.chunks_exact(self.d_out) {
                    axpy(1.0, dyr, gb);
                }
            }
        }
    }

    pub fn input_grad(&self, s: &ParameterStore, dy: &[f64]) -> Vec<f64> {
        let n = dy.len() / self.d_out;
        let w = s.value(self.w);
        let mut dx = vec![0.0; n * self.d_in];
        for (dxr, dyr) in dx.chunks_exact_mut(self.d_in).zip(dy.chunks_exact(self.d_out)) {
            for (o, &g) in dyr.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &w[o * self.d_in..(o + 1) * self.d_in], dxr);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

/// Saved normalised activations and inverse deviations.
#[derive(Debug, Clone, Default)]
pub struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new<R: Rng>(s: &mut ParameterStore, name: &str, dim: usize, rng: &mut R) -> Self {
        let gamma = s.add(&format!("{name}.weight"), &[dim], Init::Ones, rng);
        let beta = s.add(&format!("{name}.bias"), &[dim], Init::Zeros, rng);
        Self { gamma, beta, dim }
    }

    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> (Vec<f64>, LnCache) {
        let d = self.dim;
        let n = x.len() / d;
        let (g, b) = (s.value(self.gamma), s.value(self.beta));
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; n];
        for t in 0..n {
            let xr = &x[t * d..(t + 1) * d];
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[t] = is;
            for i in 0..d {
                let h = (xr[i] - mu) * is;
                xhat[t * d + i] = h;
                y[t * d + i] = h * g[i] + b[i];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, s: &mut ParameterStore, c: &LnCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let n = dy.len() / d;
        if let Some(gg) = s.grad_slot(self.gamma) {
            for t in 0..n {
                for i in 0..d {
                    gg[i] += dy[t * d + i] * c.xhat[t * d + i];
                }
            }
        }
        if let Some(gb) = s.grad_slot(self.beta) {
            for dyr in dy.chunks_exact(d) {
                axpy(1.0, dyr, gb);
            }
        }
        let g = s.value(self.gamma);
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; d];
        for t in 0..n {
            let xh = &c.xhat[t * d..(t + 1) * d];
            for i in 0..d {
                dxhat[i] = dy[t * d + i] * g[i];
            }
            let m1 = dxhat.iter().sum::<f64>() / d as f64;
            let m2 = dot(&dxhat, xh) / d as f64;
            for i in 0..d {
                dx[t * d + i] = c.inv_std[t] * (dxhat[i] - m1 - xh[i] * m2);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Two-layer perceptron with GELU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    x: Vec<f64>,
    h: Vec<f64>,
    a: Vec<f64>,
}

impl Mlp {
    pub fn new<R: Rng>(s: &mut ParameterStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(s, &format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::new(s, &format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let h = self.fc1.forward(s, x);
        let a: Vec<f64> = h.iter().map(|&v| gelu(v)).collect();
        let y = self.fc2.forward(s, &a);
        (y, MlpCache { x: x.to_vec(), h, a })
    }

    pub fn backward(&self, s: &mut ParameterStore, c: &MlpCache, dy: &[f64]) -> Vec<f64> {
        let da = self.fc2.backward(s, &c.a, dy);
        let dh: Vec<f64> = da.iter().zip(&c.h).map(|(g, &h)| g * gelu_grad(h)).collect();
        self.fc1.backward(s, &c.x, &dh)
    }
}
