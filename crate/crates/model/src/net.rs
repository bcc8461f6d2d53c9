//! Swin-Unet over stacked signal maps: a windowed-attention encoder with
//! patch merging, a decoder with patch expanding and skip concatenation
//! that reconstructs a map of the input size, and an HR regression head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::WindowGeom;
use crate::head::{HeadCache, HrHead};
use crate::layers::{LayerNorm, Linear, LnCache};
use crate::params::ParameterStore;
use crate::swin::{
    BlockCache, EmbedCache, ExpandCache, MergeCache, PatchEmbed, PatchExpand, PatchMerge, Stage,
};
use crate::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `[height, width]` in pixels.
    pub input_hw: [usize; 2],
    pub in_channels: usize,
    /// Channels of the reconstructed map; defaults to `in_channels`.
    pub out_channels: Option<usize>,
    pub patch_size: usize,
    pub window_size: usize,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub n_heads: Vec<usize>,
    pub shift: bool,
    pub mlp_ratio: usize,
    pub head_channels: usize,
    pub head_bins: usize,
    /// Encoder stage whose block output feeds the HR head; `None` uses the
    /// normalised bottleneck.
    pub head_stage: Option<usize>,
    pub decoder_sigmoid: bool,
    pub with_decoder: bool,
    pub with_hr_head: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Tiny profile for a 192x192 six-channel input.
    fn default() -> Self {
        Self {
            input_hw: [192, 192],
            in_channels: 6,
            out_channels: None,
            patch_size: 4,
            window_size: 6,
            embed_dim: 24,
            depths: vec![2, 2, 2],
            n_heads: vec![2, 4, 8],
            shift: true,
            mlp_ratio: 4,
            head_channels: 32,
            head_bins: 1,
            head_stage: None,
            decoder_sigmoid: false,
            with_decoder: true,
            with_hr_head: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Smaller profile used for single-CPU training runs.
    pub fn desk(input_hw: [usize; 2], in_channels: usize) -> Self {
        Self {
            input_hw,
            in_channels,
            window_size: 4,
            embed_dim: 16,
            n_heads: vec![1, 2, 4],
            mlp_ratio: 2,
            head_channels: 16,
            ..Self::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.depths.len()
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels.unwrap_or(self.in_channels)
    }

    pub fn without_hr_head(&self) -> Self {
        Self { with_hr_head: false, ..self.clone() }
    }

    pub fn without_decoder(&self) -> Self {
        Self { with_decoder: false, ..self.clone() }
    }

    /// Token grid of encoder stage `s`.
    pub fn grid(&self, s: usize) -> (usize, usize) {
        let f = self.patch_size << s;
        (self.input_hw[0] / f, self.input_hw[1] / f)
    }

    pub fn dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    fn extent_ok(&self, n: usize) -> bool {
        let f = self.patch_size << (self.stages() - 1);
        if n == 0 || !n.is_multiple_of(f) {
            return false;
        }
        (0..self.stages()).all(|s| {
            let g = n / (self.patch_size << s);
            g.is_multiple_of(self.window_size.min(g))
        })
    }

    /// Smallest extent `>= n` usable as an input height or width.
    pub fn fit_extent(&self, n: usize) -> usize {
        let mut m = n.max(1);
        while !self.extent_ok(m) {
            m += 1;
        }
        m
    }

    /// Same profile with the input extent padded up to fit `h x w`.
    pub fn fitted(&self, h: usize, w: usize) -> Self {
        Self { input_hw: [self.fit_extent(h), self.fit_extent(w)], ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        if s == 0 || self.n_heads.len() != s {
            return Err(ModelError::config("depths and n_heads must be non-empty and of equal length"));
        }
        if self.patch_size == 0 || self.window_size == 0 || self.embed_dim == 0 || self.in_channels == 0 {
            return Err(ModelError::config("patch, window, embed_dim and in_channels must be positive"));
        }
        if self.out_channels() == 0 || self.mlp_ratio == 0 || self.head_channels == 0 || self.head_bins == 0 {
            return Err(ModelError::config("out_channels, mlp_ratio and head sizes must be positive"));
        }
        if !self.with_decoder && !self.with_hr_head {
            return Err(ModelError::config("model needs a decoder or an HR head"));
        }
        if self.with_decoder && s < 2 {
            return Err(ModelError::config("the decoder needs at least two stages"));
        }
        for (i, &n) in self.input_hw.iter().enumerate() {
            if !self.extent_ok(n) {
                return Err(ModelError::config(format!(
                    "input extent {n} (axis {i}) must be divisible by {} with window-divisible grids; nearest valid is {}",
                    self.patch_size << (s - 1),
                    self.fit_extent(n)
                )));
            }
        }
        for st in 0..s {
            if self.depths[st] == 0 {
                return Err(ModelError::config("every stage needs at least one block"));
            }
            if self.n_heads[st] == 0 || !self.dim(st).is_multiple_of(self.n_heads[st]) {
                return Err(ModelError::config(format!(
                    "stage {st} dim {} is not divisible into {} heads",
                    self.dim(st),
                    self.n_heads[st]
                )));
            }
        }
        if let Some(h) = self.head_stage {
            if h >= s {
                return Err(ModelError::config(format!("head_stage {h} out of range for {s} stages")));
            }
        }
        let (gh, gw) = self.grid(self.head_stage.unwrap_or(s - 1));
        if self.with_hr_head && gh * gw < self.head_bins {
            return Err(ModelError::config("HR head has more pooling bins than tokens"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Reconstructed map, `[height x width x channels]`; absent without decoder.
    pub map: Option<Vec<f64>>,
    /// HR in unit scale; absent without HR head.
    pub hr: Option<f64>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone)]
struct Decoder {
    first: PatchExpand,
    concat: Vec<Linear>,
    stages: Vec<Stage>,
    expands: Vec<PatchExpand>,
    norm_up: LayerNorm,
    up: PatchExpand,
    output: Linear,
}

#[derive(Debug, Clone)]
struct Net {
    embed: PatchEmbed,
    stages: Vec<Stage>,
    merges: Vec<PatchMerge>,
    norm: LayerNorm,
    decoder: Option<Decoder>,
    head: Option<HrHead>,
}

#[derive(Debug, Clone, Default)]
struct DecoderCache {
    first: ExpandCache,
    cats: Vec<Vec<f64>>,
    stages: Vec<Vec<BlockCache>>,
    expands: Vec<ExpandCache>,
    norm_up: LnCache,
    up: ExpandCache,
    feat: Vec<f64>,
    map: Vec<f64>,
}

/// Activations saved by [`Model::forward_train`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    embed: EmbedCache,
    stages: Vec<Vec<BlockCache>>,
    merges: Vec<MergeCache>,
    norm: LnCache,
    bottleneck_len: usize,
    decoder: Option<DecoderCache>,
    head: Option<HeadCache>,
}

impl ForwardCache {
    /// Block caches of encoder stage `s`.
    pub fn encoder_blocks(&self, s: usize) -> &[BlockCache] {
        &self.stages[s]
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParameterStore,
    net: Net,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let s_n = c.stages();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut s = ParameterStore::new();
        let r = &mut rng;
        let [h, w] = c.input_hw;
        let embed = PatchEmbed::new(&mut s, "patch_embed", h, w, c.in_channels, c.patch_size, c.embed_dim, r);
        let mut stages = Vec::with_capacity(s_n);
        let mut merges = Vec::with_capacity(s_n - 1);
        for st in 0..s_n {
            let grid = c.grid(st);
            stages.push(Stage::new(
                &mut s,
                &format!("layers.{st}"),
                grid,
                c.dim(st),
                c.depths[st],
                c.n_heads[st],
                c.window_size,
                c.shift,
                c.mlp_ratio,
                r,
            )?);
            if st + 1 < s_n {
                merges.push(PatchMerge::new(&mut s, &format!("layers.{st}.downsample"), grid.0, grid.1, c.dim(st), r));
            }
        }
        let norm = LayerNorm::new(&mut s, "norm", c.dim(s_n - 1), r);
        let decoder = if c.with_decoder {
            let (bh, bw) = c.grid(s_n - 1);
            let first = PatchExpand::double(&mut s, "layers_up.0", bh, bw, c.dim(s_n - 1), r);
            let mut concat = Vec::new();
            let mut dstages = Vec::new();
            let mut expands = Vec::new();
            for inx in 1..s_n {
                let st = s_n - 1 - inx;
                let d = c.dim(st);
                concat.push(Linear::new(&mut s, &format!("concat_back_dim.{inx}"), 2 * d, d, true, r));
                dstages.push(Stage::new(
                    &mut s,
                    &format!("layers_up.{inx}"),
                    c.grid(st),
                    d,
                    c.depths[st],
                    c.n_heads[st],
                    c.window_size,
                    c.shift,
                    c.mlp_ratio,
                    r,
                )?);
                if inx + 1 < s_n {
                    let (gh, gw) = c.grid(st);
                    expands.push(PatchExpand::double(&mut s, &format!("layers_up.{inx}.upsample"), gh, gw, d, r));
                }
            }
            let norm_up = LayerNorm::new(&mut s, "norm_up", c.embed_dim, r);
            let (gh, gw) = c.grid(0);
            let up = PatchExpand::quadruple(&mut s, "up", gh, gw, c.embed_dim, r);
            let output = Linear::new(&mut s, "output", c.embed_dim, c.out_channels(), true, r);
            Some(Decoder { first, concat, stages: dstages, expands, norm_up, up, output })
        } else {
            None
        };
        if c.with_decoder && c.patch_size != 4 {
            return Err(ModelError::config("the final patch expansion restores a patch size of 4"));
        }
        let head = c.with_hr_head.then(|| {
            let st = c.head_stage.unwrap_or(s_n - 1);
            HrHead::new(&mut s, "hr_head", c.dim(st), c.head_channels, c.head_bins, r)
        });
        Ok(Self {
            config,
            store: s,
            net: Net { embed, stages, merges, norm, decoder, head },
        })
    }

    pub fn n_params(&self) -> usize {
        self.store.n_scalars()
    }

    /// Window geometry of every block, encoder first.
    pub fn window_geoms(&self) -> Vec<WindowGeom> {
        let mut out: Vec<WindowGeom> = self
            .net
            .stages
            .iter()
            .flat_map(|st| st.blocks.iter().map(|b| b.attn.geom))
            .collect();
        if let Some(d) = &self.net.decoder {
            out.extend(d.stages.iter().flat_map(|st| st.blocks.iter().map(|b| b.attn.geom)));
        }
        out
    }

    pub fn input_len(&self) -> usize {
        self.config.input_hw[0] * self.config.input_hw[1] * self.config.in_channels
    }

    fn check_input(&self, image: &[f64]) -> Result<()> {
        if image.len() != self.input_len() {
            return Err(ModelError::shape(format!(
                "image has {} values, model expects {}x{}x{}",
                image.len(),
                self.config.input_hw[0],
                self.config.input_hw[1],
                self.config.in_channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &[f64]) -> Result<ModelOutput> {
        self.forward_train(image).map(|(o, _)| o)
    }

    pub fn forward_train(&self, image: &[f64]) -> Result<(ModelOutput, ForwardCache)> {
        self.check_input(image)?;
        let s = &self.store;
        let n = &self.net;
        let sn = n.stages.len();
        let mut cache = ForwardCache::default();
        let (mut x, ec) = n.embed.forward(s, image);
        cache.embed = ec;
        let mut skips = Vec::with_capacity(sn);
        let mut stage_outs = Vec::with_capacity(sn);
        for st in 0..sn {
            skips.push(x.clone());
            let (y, bc) = n.stages[st].forward(s, &x);
            cache.stages.push(bc);
            if st + 1 < sn {
                let (m, mc) = n.merges[st].forward(s, &y);
                cache.merges.push(mc);
                x = m;
            } else {
                x = y.clone();
            }
            stage_outs.push(y);
        }
        let (bott, nc) = n.norm.forward(s, &x);
        cache.norm = nc;
        cache.bottleneck_len = bott.len();

        let hr = n.head.as_ref().map(|h| {
            let input = match self.config.head_stage {
                None => &bott,
                Some(i) => &stage_outs[i],
            };
            let (y, hc) = h.forward(s, input);
            cache.head = Some(hc);
            y
        });

        let map = n.decoder.as_ref().map(|d| {
            let mut dc = DecoderCache::default();
            let (mut u, fc) = d.first.forward(s, &bott);
            dc.first = fc;
            for inx in 1..sn {
                let skip = &skips[sn - 1 - inx];
                let dim = self.config.dim(sn - 1 - inx);
                let mut cat = Vec::with_capacity(2 * skip.len());
                for (a, b) in u.chunks_exact(dim).zip(skip.chunks_exact(dim)) {
                    cat.extend_from_slice(a);
                    cat.extend_from_slice(b);
                }
                let v = d.concat[inx - 1].forward(s, &cat);
                dc.cats.push(cat);
                let (w, bc) = d.stages[inx - 1].forward(s, &v);
                dc.stages.push(bc);
                if inx + 1 < sn {
                    let (e, xc) = d.expands[inx - 1].forward(s, &w);
                    dc.expands.push(xc);
                    u = e;
                } else {
                    u = w;
                }
            }
            let (nu, nuc) = d.norm_up.forward(s, &u);
            dc.norm_up = nuc;
            let (feat, upc) = d.up.forward(s, &nu);
            dc.up = upc;
            let mut m = d.output.forward(s, &feat);
            if self.config.decoder_sigmoid {
                m.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            dc.feat = feat;
            dc.map = m.clone();
            cache.decoder = Some(dc);
            m
        });

        let out = ModelOutput {
            map,
            hr,
            height: self.config.input_hw[0],
            width: self.config.input_hw[1],
            channels: self.config.out_channels(),
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients of a loss with `dL/dmap = d_map` and
    /// `dL/dhr = d_hr` into the store. Frozen parameters are skipped.
    pub fn backward(&mut self, cache: &ForwardCache, d_map: Option<&[f64]>, d_hr: Option<f64>) -> Result<()> {
        let s = &mut self.store;
        let n = &self.net;
        let sn = n.stages.len();
        let mut d_bott = vec![0.0; cache.bottleneck_len];
        let mut d_skips: Vec<Option<Vec<f64>>> = vec![None; sn];
        let mut d_stage_out: Option<(usize, Vec<f64>)> = None;

        if let (Some(dm), Some(d), Some(dc)) = (d_map, n.decoder.as_ref(), cache.decoder.as_ref()) {
            if dm.len() != dc.map.len() {
                return Err(ModelError::shape(format!(
                    "map gradient has {} values, expected {}",
                    dm.len(),
                    dc.map.len()
                )));
            }
            let dm: Vec<f64> = if self.config.decoder_sigmoid {
                dm.iter().zip(&dc.map).map(|(g, y)| g * y * (1.0 - y)).collect()
            } else {
                dm.to_vec()
            };
            let dfeat = d.output.backward(s, &dc.feat, &dm);
            let dnu = d.up.backward(s, &dc.up, &dfeat);
            let mut du = d.norm_up.backward(s, &dc.norm_up, &dnu);
            for inx in (1..sn).rev() {
                let dw = if inx + 1 < sn { d.expands[inx - 1].backward(s, &dc.expands[inx - 1], &du) } else { du };
                let dv = d.stages[inx - 1].backward(s, &dc.stages[inx - 1], &dw);
                let dcat = d.concat[inx - 1].backward(s, &dc.cats[inx - 1], &dv);
                let dim = self.config.dim(sn - 1 - inx);
                let mut dup = Vec::with_capacity(dcat.len() / 2);
                let mut dskip = Vec::with_capacity(dcat.len() / 2);
                for ch in dcat.chunks_exact(2 * dim) {
                    dup.extend_from_slice(&ch[..dim]);
                    dskip.extend_from_slice(&ch[dim..]);
                }
                d_skips[sn - 1 - inx] = Some(dskip);
                du = dup;
            }
            let db = d.first.backward(s, &dc.first, &du);
            crate::layers::axpy(1.0, &db, &mut d_bott);
        }

        if let (Some(g), Some(h), Some(hc)) = (d_hr, n.head.as_ref(), cache.head.as_ref()) {
            if !g.is_finite() {
                return Err(ModelError::shape("non-finite HR gradient"));
            }
            let dx = h.backward(s, hc, g);
            match self.config.head_stage {
                None => crate::layers::axpy(1.0, &dx, &mut d_bott),
                Some(i) => d_stage_out = Some((i, dx)),
            }
        }

        // Nothing upstream of the heads is trainable (e.g. a linear probe).
        let upstream = s.params().iter().any(|p| !p.frozen && !p.name.starts_with("hr_head."));
        if !upstream {
            return Ok(());
        }

        let mut g = n.norm.backward(s, &cache.norm, &d_bott);
        for st in (0..sn).rev() {
            if let Some((i, dx)) = &d_stage_out {
                if *i == st {
                    crate::layers::axpy(1.0, dx, &mut g);
                }
            }
            let mut gin = n.stages[st].backward(s, &cache.stages[st], &g);
            if let Some(ds) = &d_skips[st] {
                crate::layers::axpy(1.0, ds, &mut gin);
            }
            if st > 0 {
                g = n.merges[st - 1].backward(s, &cache.merges[st - 1], &gin);
            } else {
                n.embed.backward(s, &cache.embed, &gin);
            }
        }
        Ok(())
    }
}
