//! Multi-head self-attention inside local token windows, optionally on a
//! cyclically shifted grid with the wrapped regions masked out.

use rand::Rng;

use crate::layers::{dot, Linear};
use crate::params::{Init, ParamId, ParameterStore};
use crate::{ModelError, Result};

/// Window layout on an `h x w` token grid.
///
/// The window is clamped per axis to the grid extent; an axis is shifted by
/// half a window only when the grid is larger than the window along it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeom {
    pub h: usize,
    pub w: usize,
    pub wh: usize,
    pub ww: usize,
    pub sh: usize,
    pub sw: usize,
}

impl WindowGeom {
    pub fn new(h: usize, w: usize, window: usize, shifted: bool) -> Result<Self> {
        if h == 0 || w == 0 || window == 0 {
            return Err(ModelError::config("empty token grid or window"));
        }
        let (wh, ww) = (window.min(h), window.min(w));
        if !h.is_multiple_of(wh) || !w.is_multiple_of(ww) {
            return Err(ModelError::config(format!(
                "token grid {h}x{w} is not divisible by window {wh}x{ww}"
            )));
        }
        let sh = if shifted && h > wh { wh / 2 } else { 0 };
        let sw = if shifted && w > ww { ww / 2 } else { 0 };
        Ok(Self { h, w, wh, ww, sh, sw })
    }

    pub fn is_shifted(&self) -> bool {
        self.sh > 0 || self.sw > 0
    }

    pub fn n_windows(&self) -> usize {
        (self.h / self.wh) * (self.w / self.ww)
    }

    pub fn window_tokens(&self) -> usize {
        self.wh * self.ww
    }

    /// Grid index of every token in window-major order: window `k`, token
    /// `t` sits at `perm[k * window_tokens + t]` of the original grid.
    pub fn permutation(&self) -> Vec<usize> {
        let mut perm = Vec::with_capacity(self.h * self.w);
        for a in 0..self.h / self.wh {
            for b in 0..self.w / self.ww {
                for i in 0..self.wh {
                    for j in 0..self.ww {
                        let y = (a * self.wh + i + self.sh) % self.h;
                        let x = (b * self.ww + j + self.sw) % self.w;
                        perm.push(y * self.w + x);
                    }
                }
            }
        }
        perm
    }

    fn region(extent: usize, win: usize, shift: usize, pos: usize) -> usize {
        if shift == 0 || pos < extent - win {
            0
        } else if pos < extent - shift {
            1
        } else {
            2
        }
    }

    /// Region label of every token in window-major order (shifted grids).
    pub fn regions(&self) -> Vec<usize> {
        let mut labels = Vec::with_capacity(self.h * self.w);
        for a in 0..self.h / self.wh {
            for b in 0..self.w / self.ww {
                for i in 0..self.wh {
                    for j in 0..self.ww {
                        let y = a * self.wh + i;
                        let x = b * self.ww + j;
                        labels.push(
                            3 * Self::region(self.h, self.wh, self.sh, y)
                                + Self::region(self.w, self.ww, self.sw, x),
                        );
                    }
                }
            }
        }
        labels
    }

    /// Index into the relative-position table for each ordered token pair.
    pub fn relative_index(&self) -> Vec<usize> {
        let n = self.window_tokens();
        let mut idx = Vec::with_capacity(n * n);
        for a in 0..n {
            let (ya, xa) = (a / self.ww, a % self.ww);
            for b in 0..n {
                let (yb, xb) = (b / self.ww, b % self.ww);
                let dy = ya + self.wh - 1 - yb;
                let dx = xa + self.ww - 1 - xb;
                idx.push(dy * (2 * self.ww - 1) + dx);
            }
        }
        idx
    }

    pub fn table_len(&self) -> usize {
        (2 * self.wh - 1) * (2 * self.ww - 1)
    }
}

#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub bias_table: ParamId,
    pub dim: usize,
    pub heads: usize,
    pub geom: WindowGeom,
    perm: Vec<usize>,
    rel: Vec<usize>,
    regions: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default)]
pub struct AttnCache {
    x: Vec<f64>,
    qkv: Vec<f64>,
    /// Softmax weights, `[window][head][n][n]`.
    probs: Vec<f64>,
    out: Vec<f64>,
}

impl AttnCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl WindowAttention {
    pub fn new<R: Rng>(
        s: &mut ParameterStore,
        name: &str,
        dim: usize,
        heads: usize,
        geom: WindowGeom,
        qkv_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(ModelError::config(format!("dim {dim} not divisible into {heads} heads")));
        }
        let qkv = Linear::new(s, &format!("{name}.qkv"), dim, 3 * dim, qkv_bias, rng);
        let proj = Linear::new(s, &format!("{name}.proj"), dim, dim, true, rng);
        let bias_table = s.add(
            &format!("{name}.relative_position_bias_table"),
            &[geom.table_len(), heads],
            Init::TruncNormal,
            rng,
        );
        Ok(Self {
            qkv,
            proj,
            bias_table,
            dim,
            heads,
            geom,
            perm: geom.permutation(),
            rel: geom.relative_index(),
            regions: geom.is_shifted().then(|| geom.regions()),
        })
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn allowed(&self, base: usize, a: usize, b: usize) -> bool {
        match &self.regions {
            Some(r) => r[base + a] == r[base + b],
            None => true,
        }
    }

    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> (Vec<f64>, AttnCache) {
        let d = self.dim;
        let hd = self.head_dim();
        let n = self.geom.window_tokens();
        let nh = self.heads;
        let scale = (hd as f64).powf(-0.5);
        let qkv = self.qkv.forward(s, x);
        let table = s.value(self.bias_table);
        let mut out = vec![0.0; x.len()];
        let mut probs = vec![0.0; self.geom.n_windows() * nh * n * n];
        let mut q = vec![0.0; n * hd];
        let mut k = vec![0.0; n * hd];
        let mut v = vec![0.0; n * hd];
        for win in 0..self.geom.n_windows() {
            let base = win * n;
            for h in 0..nh {
                for t in 0..n {
                    let row = &qkv[self.perm[base + t] * 3 * d..];
                    for c in 0..hd {
                        q[t * hd + c] = row[h * hd + c] * scale;
                        k[t * hd + c] = row[d + h * hd + c];
                        v[t * hd + c] = row[2 * d + h * hd + c];
                    }
                }
                let p = &mut probs[(win * nh + h) * n * n..(win * nh + h + 1) * n * n];
                for a in 0..n {
                    let pr = &mut p[a * n..(a + 1) * n];
                    let mut mx = f64::NEG_INFINITY;
                    for b in 0..n {
                        pr[b] = if self.allowed(base, a, b) {
                            dot(&q[a * hd..(a + 1) * hd], &k[b * hd..(b + 1) * hd])
                                + table[self.rel[a * n + b] * nh + h]
                        } else {
                            f64::NEG_INFINITY
                        };
                        mx = mx.max(pr[b]);
                    }
                    let mut sum = 0.0;
                    for e in pr.iter_mut() {
                        *e = (*e - mx).exp();
                        sum += *e;
                    }
                    let o = &mut out[self.perm[base + a] * d + h * hd..][..hd];
                    for b in 0..n {
                        pr[b] /= sum;
                        if pr[b] != 0.0 {
                            crate::layers::axpy(pr[b], &v[b * hd..(b + 1) * hd], o);
                        }
                    }
                }
            }
        }
        let y = self.proj.forward(s, &out);
        (y, AttnCache { x: x.to_vec(), qkv, probs, out })
    }

    pub fn backward(&self, s: &mut ParameterStore, c: &AttnCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let hd = self.head_dim();
        let n = self.geom.window_tokens();
        let nh = self.heads;
        let scale = (hd as f64).powf(-0.5);
        let dout = self.proj.backward(s, &c.out, dy);
        let mut dqkv = vec![0.0; c.qkv.len()];
        let mut dtable = vec![0.0; self.geom.table_len() * nh];
        let mut q = vec![0.0; n * hd];
        let mut k = vec![0.0; n * hd];
        let mut v = vec![0.0; n * hd];
        let mut go = vec![0.0; n * hd];
        let mut ds = vec![0.0; n * n];
        for win in 0..self.geom.n_windows() {
            let base = win * n;
            for h in 0..nh {
                for t in 0..n {
                    let tok = self.perm[base + t];
                    let row = &c.qkv[tok * 3 * d..];
                    for ch in 0..hd {
                        q[t * hd + ch] = row[h * hd + ch] * scale;
                        k[t * hd + ch] = row[d + h * hd + ch];
                        v[t * hd + ch] = row[2 * d + h * hd + ch];
                        go[t * hd + ch] = dout[tok * d + h * hd + ch];
                    }
                }
                let p = &c.probs[(win * nh + h) * n * n..(win * nh + h + 1) * n * n];
                for a in 0..n {
                    let ga = &go[a * hd..(a + 1) * hd];
                    let mut acc = 0.0;
                    for b in 0..n {
                        let dp = if p[a * n + b] != 0.0 { dot(ga, &v[b * hd..(b + 1) * hd]) } else { 0.0 };
                        ds[a * n + b] = dp;
                        acc += p[a * n + b] * dp;
                    }
                    for b in 0..n {
                        ds[a * n + b] = p[a * n + b] * (ds[a * n + b] - acc);
                        dtable[self.rel[a * n + b] * nh + h] += ds[a * n + b];
                    }
                }
                for a in 0..n {
                    let ta = self.perm[base + a];
                    for b in 0..n {
                        let pab = p[a * n + b];
                        let sab = ds[a * n + b];
                        let tb = self.perm[base + b];
                        if pab != 0.0 {
                            // dV[b] += P[a,b] * dOut[a]
                            let (src, dst) = (&go[a * hd..(a + 1) * hd], &mut dqkv[tb * 3 * d + 2 * d + h * hd..][..hd]);
                            crate::layers::axpy(pab, src, dst);
                        }
                        if sab != 0.0 {
                            let dq = &mut dqkv[ta * 3 * d + h * hd..][..hd];
                            crate::layers::axpy(sab * scale, &k[b * hd..(b + 1) * hd], dq);
                            let dk = &mut dqkv[tb * 3 * d + d + h * hd..][..hd];
                            crate::layers::axpy(sab, &q[a * hd..(a + 1) * hd], dk);
                        }
                    }
                }
            }
        }
        if let Some(g) = s.grad_slot(self.bias_table) {
            crate::layers::axpy(1.0, &dtable, g);
        }
        self.qkv.backward(s, &c.x, &dqkv)
    }
}
