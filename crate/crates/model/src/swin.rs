//! Transformer blocks and the resampling layers of the encoder/decoder:
//! patch embedding, patch merging (downsample) and patch expanding
//! (upsample). Token grids are row-major `[h * w x dim]` buffers.

use rand::Rng;

use crate::attention::{AttnCache, WindowAttention, WindowGeom};
use crate::layers::{LayerNorm, Linear, LnCache, Mlp, MlpCache};
use crate::params::ParameterStore;
use crate::Result;

/// Pre-norm window-attention block followed by a pre-norm MLP, both residual.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Default)]
pub struct BlockCache {
    n1: LnCache,
    attn: AttnCache,
    n2: LnCache,
    mlp: MlpCache,
}

impl BlockCache {
    pub fn attn(&self) -> &AttnCache {
        &self.attn
    }
}

impl SwinBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        s: &mut ParameterStore,
        name: &str,
        dim: usize,
        heads: usize,
        geom: WindowGeom,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(s, &format!("{name}.norm1"), dim, rng),
            attn: WindowAttention::new(s, &format!("{name}.attn"), dim, heads, geom, true, rng)?,
            norm2: LayerNorm::new(s, &format!("{name}.norm2"), dim, rng),
            mlp: Mlp::new(s, &format!("{name}.mlp"), dim, dim * mlp_ratio, rng),
        })
    }

    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> (Vec<f64>, BlockCache) {
        let (a, n1) = self.norm1.forward(s, x);
        let (b, attn) = self.attn.forward(s, &a);
        let x1: Vec<f64> = x.iter().zip(&b).map(|(p, q)| p + q).collect();
        let (c, n2) = self.norm2.forward(s, &x1);
        let (d, mlp) = self.mlp.forward(s, &c);
        let y = x1.iter().zip(&d).map(|(p, q)| p + q).collect();
        (y, BlockCache { n1, attn, n2, mlp })
    }

    pub fn backward(&self, s: &mut ParameterStore, c: &BlockCache, dy: &[f64]) -> Vec<f64> {
        let dc = self.mlp.backward(s, &c.mlp, dy);
        let dx1n = self.norm2.backward(s, &c.n2, &dc);
        let dx1: Vec<f64> = dy.iter().zip(&dx1n).map(|(p, q)| p + q).collect();
        let da = self.attn.backward(s, &c.attn, &dx1);
        let dxn = self.norm1.backward(s, &c.n1, &da);
        dx1.iter().zip(&dxn).map(|(p, q)| p + q).collect()
    }
}

/// A run of blocks at one resolution; odd blocks use shifted windows when
/// shifting is enabled.
#[derive(Debug, Clone)]
pub struct Stage {
    pub blocks: Vec<SwinBlock>,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        s: &mut ParameterStore,
        name: &str,
        grid: (usize, usize),
        dim: usize,
        depth: usize,
        heads: usize,
        window: usize,
        shift: bool,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(depth);
        for j in 0..depth {
            let geom = WindowGeom::new(grid.0, grid.1, window, shift && j % 2 == 1)?;
            blocks.push(SwinBlock::new(s, &format!("{name}.blocks.{j}"), dim, heads, geom, mlp_ratio, rng)?);
        }
        Ok(Self { blocks })
    }

    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> (Vec<f64>, Vec<BlockCache>) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.to_vec();
        for b in &self.blocks {
            let (y, c) = b.forward(s, &h);
            caches.push(c);
            h = y;
        }
        (h, caches)
    }

    pub fn backward(&self, s: &mut ParameterStore, caches: &[BlockCache], dy: &[f64]) -> Vec<f64> {
        let mut g = dy.to_vec();
        for (b, c) in self.blocks.iter().zip(caches).rev() {
            g = b.backward(s, c, &g);
        }
        g
    }
}

/// Non-overlapping `p x p` patches of an `h x w x c` image projected to
/// `dim`, then layer-normalised.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub norm: LayerNorm,
    pub patch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EmbedCache {
    patches: Vec<f64>,
    norm: LnCache,
}

impl PatchEmbed {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        s: &mut ParameterStore,
        name: &str,
        h: usize,
        w: usize,
        c: usize,
        patch: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            proj: Linear::new(s, &format!("{name}.proj"), patch * patch * c, dim, true, rng),
            norm: LayerNorm::new(s, &format!("{name}.norm"), dim, rng),
            patch,
            h,
            w,
            c,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.h / self.patch, self.w / self.patch)
    }

    /// Flattens each patch in `(dy, dx, channel)` order.
    pub fn patchify(&self, image: &[f64]) -> Vec<f64> {
        let (p, c) = (self.patch, self.c);
        let (gh, gw) = self.grid();
        let mut out = Vec::with_capacity(image.len());
        for i in 0..gh {
            for j in 0..gw {
                for dy in 0..p {
                    let row = ((i * p + dy) * self.w + j * p) * c;
                    out.extend_from_slice(&image[row..row + p * c]);
                }
            }
        }
        out
    }

    pub fn forward(&self, s: &ParameterStore, image: &[f64]) -> (Vec<f64>, EmbedCache) {
        let patches = self.patchify(image);
        let t = self.proj.forward(s, &patches);
        let (y, norm) = self.norm.forward(s, &t);
        (y, EmbedCache { patches, norm })
    }

    /// Accumulates parameter gradients; the image itself needs no gradient.
    pub fn backward(&self, s: &mut ParameterStore, c: &EmbedCache, dy: &[f64]) {
        let dt = self.norm.backward(s, &c.norm, dy);
        self.proj.accumulate(s, &c.patches, &dt);
    }
}

/// 2x2 neighbourhood concatenation, layer norm, and a bias-free projection
/// from `4 * dim` to `2 * dim`.
#[derive(Debug, Clone)]
pub struct PatchMerge {
    pub norm: LayerNorm,
    pub reduction: Linear,
    pub h: usize,
    pub w: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MergeCache {
    normed: Vec<f64>,
    norm: LnCache,
}

/// Offsets of the four concatenated neighbours, in concatenation order.
const MERGE_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

impl PatchMerge {
    pub fn new<R: Rng>(s: &mut ParameterStore, name: &str, h: usize, w: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            norm: LayerNorm::new(s, &format!("{name}.norm"), 4 * dim, rng),
            reduction: Linear::new(s, &format!("{name}.reduction"), 4 * dim, 2 * dim, false, rng),
            h,
            w,
            dim,
        }
    }

    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> (Vec<f64>, MergeCache) {
        let d = self.dim;
        let (oh, ow) = (self.h / 2, self.w / 2);
        let mut cat = Vec::with_capacity(x.len());
        for i in 0..oh {
            for j in 0..ow {
                for (dy, dx) in MERGE_OFFSETS {
                    let src = (2 * i + dy) * self.w + 2 * j + dx;
                    cat.extend_from_slice(&x[src * d..(src + 1) * d]);
                }
            }
        }
        let (normed, norm) = self.norm.forward(s, &cat);
        let y = self.reduction.forward(s, &normed);
        (y, MergeCache { normed, norm })
    }

    pub fn backward(&self, s: &mut ParameterStore, c: &MergeCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let dn = self.reduction.backward(s, &c.normed, dy);
        let dcat = self.norm.backward(s, &c.norm, &dn);
        let mut dx = vec![0.0; self.h * self.w * d];
        let ow = self.w / 2;
        for (t, chunk) in dcat.chunks_exact(4 * d).enumerate() {
            let (i, j) = (t / ow, t % ow);
            for (k, (dy, dxo)) in MERGE_OFFSETS.iter().enumerate() {
                let dst = (2 * i + dy) * self.w + 2 * j + dxo;
                dx[dst * d..(dst + 1) * d].copy_from_slice(&chunk[k * d..(k + 1) * d]);
            }
        }
        dx
    }
}

/// Bias-free projection from `dim` to `scale^2 * out_dim`, rearranged into a
/// `scale x scale` block of `out_dim` tokens per input token, then layer norm.
#[derive(Debug, Clone)]
pub struct PatchExpand {
    pub expand: Linear,
    pub norm: LayerNorm,
    pub h: usize,
    pub w: usize,
    pub scale: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExpandCache {
    x: Vec<f64>,
    norm: LnCache,
}

impl PatchExpand {
    /// Upsample by 2 and halve the channel count.
    pub fn double<R: Rng>(s: &mut ParameterStore, name: &str, h: usize, w: usize, dim: usize, rng: &mut R) -> Self {
        Self::new(s, name, h, w, dim, 2 * dim, 2, dim / 2, rng)
    }

    /// Upsample by 4 keeping the channel count (final patch-size restore).
    pub fn quadruple<R: Rng>(s: &mut ParameterStore, name: &str, h: usize, w: usize, dim: usize, rng: &mut R) -> Self {
        Self::new(s, name, h, w, dim, 16 * dim, 4, dim, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng>(
        s: &mut ParameterStore,
        name: &str,
        h: usize,
        w: usize,
        dim: usize,
        proj: usize,
        scale: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            expand: Linear::new(s, &format!("{name}.expand"), dim, proj, false, rng),
            norm: LayerNorm::new(s, &format!("{name}.norm"), out_dim, rng),
            h,
            w,
            scale,
            out_dim,
        }
    }

    fn rearrange(&self, e: &[f64], inverse: bool, out: &mut [f64]) {
        let (p, c) = (self.scale, self.out_dim);
        let ow = self.w * p;
        for i in 0..self.h {
            for j in 0..self.w {
                let src = (i * self.w + j) * p * p * c;
                for p1 in 0..p {
                    for p2 in 0..p {
                        let a = src + (p1 * p + p2) * c;
                        let b = ((i * p + p1) * ow + j * p + p2) * c;
                        if inverse {
                            out[a..a + c].copy_from_slice(&e[b..b + c]);
                        } else {
                            out[b..b + c].copy_from_slice(&e[a..a + c]);
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, s: &ParameterStore, x: &[f64]) -> (Vec<f64>, ExpandCache) {
        let e = self.expand.forward(s, x);
        let mut up = vec![0.0; e.len()];
        self.rearrange(&e, false, &mut up);
        let (y, norm) = self.norm.forward(s, &up);
        (y, ExpandCache { x: x.to_vec(), norm })
    }

    pub fn backward(&self, s: &mut ParameterStore, c: &ExpandCache, dy: &[f64]) -> Vec<f64> {
        let dup = self.norm.backward(s, &c.norm, dy);
        let mut de = vec![0.0; dup.len()];
        self.rearrange(&dup, true, &mut de);
        self.expand.backward(s, &c.x, &de)
    }
}
