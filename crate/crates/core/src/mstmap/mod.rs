//! Multi-scale spatial-temporal maps.
//!
//! A [`RoiTraceSet`] holds per-frame channel means for a handful of facial
//! regions. [`build_mstmap`] averages every non-empty region subset per
//! channel, band-passes and min-max normalises each row. [`stack_square`]
//! cuts the time axis into equal chunks and stacks them vertically so that
//! temporally distant segments end up in the same spatial neighbourhood.

mod io;
mod traces;

use serde::{Deserialize, Serialize};

pub use io::{read_map, write_map, MapFile, MAP_MAGIC};
pub use traces::{read_traces, write_traces, RoiTraceSet, TraceSidecar};

use crate::timeseries::{bandpass_slice, condition_slice, minmax_slice, FreqBand, TimeSeries};
use crate::{Error, Result};

/// Number of temporal chunks used for square stacking.
pub const DEFAULT_CHUNKS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Mst,
    Bvp,
    Pbvp,
}

/// Provenance of one map row: the ROI subset averaged and the colour channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub subset: Vec<usize>,
    pub channel: usize,
}

/// How colour channels enter the stacked image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowsMode {
    /// Channels of one ROI subset become image channels.
    #[default]
    Channels,
    /// Every (subset, channel) pair is its own image row; single image channel.
    Rows,
}

impl RowsMode {
    /// Image channels produced for a trace set with `n_channels` colour channels.
    pub fn fold(self, n_channels: usize) -> usize {
        match self {
            RowsMode::Channels => n_channels,
            RowsMode::Rows => 1,
        }
    }
}

/// A rows x T matrix of conditioned signals: an MSTmap, a BVPmap or a
/// pseudo-BVPmap. Values are stored as `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMap {
    kind: MapKind,
    n_rows: usize,
    len: usize,
    fs: f64,
    data: Vec<f32>,
    row_index: Vec<RowLabel>,
}

impl SignalMap {
    pub fn new(
        kind: MapKind,
        n_rows: usize,
        len: usize,
        fs: f64,
        data: Vec<f32>,
        row_index: Vec<RowLabel>,
    ) -> Result<Self> {
        if n_rows == 0 || len == 0 {
            return Err(Error::invalid("map must have at least one row and one sample"));
        }
        if data.len() != n_rows * len {
            return Err(Error::invalid(format!(
                "map data has {} values, expected {n_rows} x {len}",
                data.len()
            )));
        }
        if !row_index.is_empty() && row_index.len() != n_rows {
            return Err(Error::invalid("row index length does not match row count"));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid("map sampling rate must be positive"));
        }
        Ok(Self { kind, n_rows, len, fs, data, row_index })
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of samples per row (T).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.len..(r + 1) * self.len]
    }

    pub fn row_index(&self) -> &[RowLabel] {
        &self.row_index
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Non-empty ROI subsets in binary counting order: bit `i` of the counter
/// selects ROI `i`.
pub fn roi_subsets(n_rois: usize) -> Vec<Vec<usize>> {
    assert!(n_rois < usize::BITS as usize, "too many ROIs");
    (1usize..(1 << n_rois))
        .map(|mask| (0..n_rois).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

fn to_f32(x: &[f64]) -> impl Iterator<Item = f32> + '_ {
    x.iter().map(|&v| v as f32)
}

/// Builds the MSTmap: one conditioned row per (ROI subset, channel), channels
/// innermost.
pub fn build_mstmap(traces: &RoiTraceSet, band: FreqBand) -> Result<SignalMap> {
    let t = traces.len();
    if t < 9 || !t.is_multiple_of(DEFAULT_CHUNKS) {
        return Err(Error::invalid(format!(
            "trace length {t} must be at least 9 and divisible by {DEFAULT_CHUNKS}"
        )));
    }
    band.validate(traces.fs())?;
    let subsets = roi_subsets(traces.n_rois());
    let n_ch = traces.n_channels();
    let mut data = Vec::with_capacity(subsets.len() * n_ch * t);
    let mut row_index = Vec::with_capacity(subsets.len() * n_ch);
    for subset in &subsets {
        for c in 0..n_ch {
            let avg = traces.subset_mean(subset, c);
            data.extend(to_f32(&condition_slice(&avg, traces.fs(), band)?));
            row_index.push(RowLabel { subset: subset.clone(), channel: c });
        }
    }
    SignalMap::new(MapKind::Mst, row_index.len(), t, traces.fs(), data, row_index)
}

/// Replicates the conditioned ground-truth pulse into `r_rows` identical rows.
pub fn build_bvpmap(bvp: &TimeSeries, r_rows: usize, band: FreqBand) -> Result<SignalMap> {
    replicate_rows(MapKind::Bvp, bvp, r_rows, band)
}

pub(crate) fn replicate_rows(
    kind: MapKind,
    signal: &TimeSeries,
    r_rows: usize,
    band: FreqBand,
) -> Result<SignalMap> {
    if r_rows == 0 {
        return Err(Error::invalid("row count must be positive"));
    }
    let row: Vec<f32> = to_f32(&condition_slice(signal.samples(), signal.fs(), band)?).collect();
    let mut data = Vec::with_capacity(r_rows * row.len());
    for _ in 0..r_rows {
        data.extend_from_slice(&row);
    }
    SignalMap::new(kind, r_rows, signal.len(), signal.fs(), data, Vec::new())
}

/// BVPmap with the same shape and row index as `like`.
pub fn build_bvpmap_for(bvp: &TimeSeries, like: &SignalMap, band: FreqBand) -> Result<SignalMap> {
    if bvp.len() != like.len() {
        return Err(Error::invalid(format!(
            "bvp length {} does not match map length {}",
            bvp.len(),
            like.len()
        )));
    }
    let mut map = build_bvpmap(bvp, like.n_rows(), band)?;
    map.row_index = like.row_index.clone();
    Ok(map)
}

/// Conditions an arbitrary signal the same way map rows are conditioned.
pub fn condition(ts: &TimeSeries, band: FreqBand) -> Result<Vec<f64>> {
    Ok(minmax_slice(&bandpass_slice(ts.samples(), ts.fs(), band)?))
}

/// Geometry of a stacked map.
///
/// Map row `r`, sample `t` lands at image row `k * rows_per_chunk + r / fold`,
/// column `t % chunk_len`, channel `r % fold`, where `k = t / chunk_len`.
/// Chunk 0 is on top. Rows and columns beyond the stacked extent repeat the
/// last stacked row / column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackLayout {
    pub n_rows: usize,
    pub len: usize,
    pub chunks: usize,
    pub chunk_len: usize,
    pub fold: usize,
    pub rows_per_chunk: usize,
    pub height: usize,
    pub width: usize,
    pub order: String,
}

const LAYOUT_ORDER: &str = "chunk-major-top-down/subset-rows/channels-folded/edge-padded";

impl StackLayout {
    pub fn new(n_rows: usize, len: usize, chunks: usize, fold: usize) -> Result<Self> {
        if chunks == 0 || !len.is_multiple_of(chunks) {
            return Err(Error::invalid(format!(
                "length {len} is not divisible into {chunks} chunks"
            )));
        }
        if fold == 0 || !n_rows.is_multiple_of(fold) {
            return Err(Error::invalid(format!(
                "{n_rows} rows cannot be folded into {fold} image channels"
            )));
        }
        let rows_per_chunk = n_rows / fold;
        let chunk_len = len / chunks;
        Ok(Self {
            n_rows,
            len,
            chunks,
            chunk_len,
            fold,
            rows_per_chunk,
            height: chunks * rows_per_chunk,
            width: chunk_len,
            order: LAYOUT_ORDER.to_string(),
        })
    }

    pub fn stacked_height(&self) -> usize {
        self.chunks * self.rows_per_chunk
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.fold
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.order == LAYOUT_ORDER
            && self.chunks > 0
            && self.fold > 0
            && self.chunk_len * self.chunks == self.len
            && self.rows_per_chunk * self.fold == self.n_rows
            && self.height >= self.stacked_height()
            && self.width >= self.chunk_len
            && self.chunk_len > 0
            && self.rows_per_chunk > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::format(format!("inconsistent stack layout {self:?}")))
        }
    }

    /// Same layout padded up to `height` x `width`.
    pub fn padded(&self, height: usize, width: usize) -> Result<Self> {
        if height < self.stacked_height() || width < self.chunk_len {
            return Err(Error::invalid(format!(
                "cannot pad {}x{} down to {height}x{width}",
                self.stacked_height(),
                self.chunk_len
            )));
        }
        Ok(Self { height, width, ..self.clone() })
    }

    #[inline]
    fn pixel_of(&self, row: usize, t: usize) -> usize {
        let k = t / self.chunk_len;
        let x = t % self.chunk_len;
        let y = k * self.rows_per_chunk + row / self.fold;
        (y * self.width + x) * self.fold + row % self.fold
    }

    /// Scatters row-major `rows` (n_rows x len) into an image, replicating
    /// the last stacked row/column into the padding.
    pub fn stack<T: Copy + Default>(&self, rows: &[T]) -> Vec<T> {
        assert_eq!(rows.len(), self.n_rows * self.len);
        let mut img = vec![T::default(); self.pixels()];
        for r in 0..self.n_rows {
            for t in 0..self.len {
                img[self.pixel_of(r, t)] = rows[r * self.len + t];
            }
        }
        let c = self.fold;
        let w = self.width;
        for y in 0..self.stacked_height() {
            for x in self.chunk_len..w {
                for ch in 0..c {
                    img[(y * w + x) * c + ch] = img[(y * w + self.chunk_len - 1) * c + ch];
                }
            }
        }
        let last = self.stacked_height() - 1;
        for y in self.stacked_height()..self.height {
            let (src, dst) = img.split_at_mut(y * w * c);
            dst[..w * c].copy_from_slice(&src[last * w * c..(last + 1) * w * c]);
        }
        img
    }

    /// Gathers map rows back out of an image, ignoring padding.
    pub fn unstack<T: Copy + Default>(&self, image: &[T]) -> Vec<T> {
        assert_eq!(image.len(), self.pixels());
        let mut rows = vec![T::default(); self.n_rows * self.len];
        for r in 0..self.n_rows {
            for t in 0..self.len {
                rows[r * self.len + t] = image[self.pixel_of(r, t)];
            }
        }
        rows
    }

    /// Adjoint of [`unstack`](Self::unstack): row gradients scattered into an
    /// image-shaped buffer, zero in the padding.
    pub fn scatter_rows(&self, rows: &[f64]) -> Vec<f64> {
        assert_eq!(rows.len(), self.n_rows * self.len);
        let mut img = vec![0.0; self.pixels()];
        for r in 0..self.n_rows {
            for t in 0..self.len {
                img[self.pixel_of(r, t)] = rows[r * self.len + t];
            }
        }
        img
    }

    /// Image pixel mask (true where a map sample lives, false in padding).
    pub fn content_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.pixels()];
        for r in 0..self.n_rows {
            for t in 0..self.len {
                m[self.pixel_of(r, t)] = true;
            }
        }
        m
    }
}

/// A stacked map image, `height x width x fold` (HWC, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct StackedMap {
    kind: MapKind,
    fs: f64,
    image: Vec<f32>,
    layout: StackLayout,
    row_index: Vec<RowLabel>,
}

impl StackedMap {
    pub fn from_parts(
        kind: MapKind,
        fs: f64,
        image: Vec<f32>,
        layout: StackLayout,
        row_index: Vec<RowLabel>,
    ) -> Result<Self> {
        layout.validate()?;
        if image.len() != layout.pixels() {
            return Err(Error::format(format!(
                "image has {} values, layout expects {}",
                image.len(),
                layout.pixels()
            )));
        }
        Ok(Self { kind, fs, image, layout, row_index })
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn image(&self) -> &[f32] {
        &self.image
    }

    pub fn image_mut(&mut self) -> &mut [f32] {
        &mut self.image
    }

    pub fn layout(&self) -> &StackLayout {
        &self.layout
    }

    pub fn row_index(&self) -> &[RowLabel] {
        &self.row_index
    }

    pub fn height(&self) -> usize {
        self.layout.height
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn channels(&self) -> usize {
        self.layout.fold
    }

    /// Re-pads the stacked content to `height` x `width`.
    pub fn pad_to(&self, height: usize, width: usize) -> Result<Self> {
        let rows = self.layout.unstack(&self.image);
        let layout = self.layout.padded(height, width)?;
        Ok(Self {
            image: layout.stack(&rows),
            layout,
            ..self.clone()
        })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.image.iter().map(|&v| v as f64).collect()
    }
}

/// Splits the time axis into `chunks` equal pieces and stacks them
/// vertically. `fold` image channels take consecutive rows of one subset.
pub fn stack_square(map: &SignalMap, chunks: usize, fold: usize) -> Result<StackedMap> {
    let layout = StackLayout::new(map.n_rows, map.len, chunks, fold)?;
    let image = layout.stack(&map.data);
    Ok(StackedMap {
        kind: map.kind,
        fs: map.fs,
        image,
        layout,
        row_index: map.row_index.clone(),
    })
}

/// Exact inverse of [`stack_square`] (padding is dropped).
pub fn unstack(s: &StackedMap) -> Result<SignalMap> {
    s.layout.validate()?;
    if s.image.len() != s.layout.pixels() {
        return Err(Error::format("image size does not match its layout"));
    }
    let data = s.layout.unstack(&s.image);
    SignalMap::new(
        s.kind,
        s.layout.n_rows,
        s.layout.len,
        s.fs,
        data,
        s.row_index.clone(),
    )
}

/// Result of cutting a recording into fixed-length windows.
#[derive(Debug, Clone)]
pub struct Windows {
    pub windows: Vec<RoiTraceSet>,
    pub starts: Vec<usize>,
    /// Set when the recording is shorter than one window.
    pub too_short: bool,
}

/// Fixed-length windows every `stride` frames. With `stride == len` the
/// windows do not overlap and the remainder is dropped.
pub fn window_samples(traces: &RoiTraceSet, len: usize, stride: usize) -> Result<Windows> {
    let starts = window_starts(traces.len(), len, stride)?;
    let windows = starts
        .iter()
        .map(|&s| traces.window(s, len))
        .collect::<Result<Vec<_>>>()?;
    Ok(Windows {
        too_short: windows.is_empty(),
        windows,
        starts,
    })
}

pub fn window_starts(total: usize, len: usize, stride: usize) -> Result<Vec<usize>> {
    if len == 0 || stride == 0 {
        return Err(Error::invalid("window length and stride must be positive"));
    }
    if len > total {
        return Ok(Vec::new());
    }
    Ok((0..=(total - len) / stride).map(|i| i * stride).collect())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use proptest::prelude::*;

    fn traces_from(rows: Vec<Vec<Vec<f64>>>, fs: f64) -> RoiTraceSet {
        let n_rois = rows.len();
        let n_ch = rows[0].len();
        let names = (0..n_ch).map(|c| format!("c{c}")).collect();
        let flat = rows.into_iter().flatten().flatten().collect();
        RoiTraceSet::new(flat, n_rois, n_ch, fs, "s".into(), names).unwrap()
    }

    fn wave(freq: f64, phase: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 10.0 + (2.0 * PI * freq * i as f64 / 30.0 + phase).sin())
            .collect()
    }

    #[test]
    fn two_rois_one_channel() {
        let u = wave(1.1, 0.0, 300);
        let v = wave(1.7, 1.0, 300);
        let traces = traces_from(vec![vec![u.clone()], vec![v.clone()]], 30.0);
        let map = build_mstmap(&traces, FreqBand::HR).unwrap();
        assert_eq!(map.n_rows(), 3);
        let avg: Vec<f64> = u.iter().zip(&v).map(|(a, b)| (a + b) / 2.0).collect();
        for (r, sig) in [u, v, avg].iter().enumerate() {
            let expect: Vec<f32> = condition_slice(sig, 30.0, FreqBand::HR)
                .unwrap()
                .iter()
                .map(|&x| x as f32)
                .collect();
            assert_eq!(map.row(r), &expect[..]);
        }
        assert_eq!(map.row_index()[2].subset, vec![0, 1]);
    }

    #[test]
    fn row_count_law_and_range() {
        let n = 90;
        let rows: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|r| (0..2).map(|c| wave(1.0 + 0.1 * r as f64, c as f64, n)).collect())
            .collect();
        let map = build_mstmap(&traces_from(rows, 30.0), FreqBand::HR).unwrap();
        assert_eq!(map.n_rows(), 63 * 2);
        for r in 0..map.n_rows() {
            let row = map.row(r);
            let lo = row.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn identical_rois_give_identical_rows() {
        let w = wave(1.3, 0.2, 96);
        let rows = vec![vec![w.clone(), w.clone()]; 4];
        let map = build_mstmap(&traces_from(rows, 30.0), FreqBand::HR).unwrap();
        for r in 1..map.n_rows() {
            for (a, b) in map.row(0).iter().zip(map.row(r)) {
                assert!((a - b).abs() as f64 <= 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        let traces = traces_from(vec![vec![wave(1.0, 0.0, 100)]], 30.0);
        assert!(build_mstmap(&traces, FreqBand::HR).is_err());
    }

    #[test]
    fn permuting_rois_permutes_rows() {
        let a = wave(1.1, 0.0, 150);
        let b = wave(1.6, 0.5, 150);
        let c = wave(2.1, 1.5, 150);
        let m1 = build_mstmap(
            &traces_from(vec![vec![a.clone()], vec![b.clone()], vec![c.clone()]], 30.0),
            FreqBand::HR,
        )
        .unwrap();
        let m2 = build_mstmap(&traces_from(vec![vec![c], vec![a], vec![b]], 30.0), FreqBand::HR)
            .unwrap();
        let key = |m: &SignalMap| {
            let mut rows: Vec<Vec<i64>> = (0..m.n_rows())
                .map(|r| m.row(r).iter().map(|v| (v * 1e5).round() as i64).collect())
                .collect();
            rows.sort();
            rows
        };
        assert_eq!(key(&m1), key(&m2));
    }

    #[test]
    fn bvpmap_rows_are_identical() {
        let bvp = TimeSeries::new(wave(1.2, 0.0, 576), 30.0).unwrap();
        let map = build_bvpmap(&bvp, 64, FreqBand::HR).unwrap();
        assert_eq!((map.n_rows(), map.len()), (64, 576));
        let expect: Vec<f32> = condition(&bvp, FreqBand::HR)
            .unwrap()
            .iter()
            .map(|&v| v as f32)
            .collect();
        for r in 0..64 {
            assert_eq!(map.row(r), &expect[..]);
        }
        assert_eq!(build_bvpmap(&bvp, 1, FreqBand::HR).unwrap().n_rows(), 1);
        let like = SignalMap::new(MapKind::Mst, 2, 300, 30.0, vec![0.0; 600], vec![]).unwrap();
        assert!(build_bvpmap_for(&bvp, &like, FreqBand::HR).is_err());
    }

    #[test]
    fn stacking_shapes() {
        let map = SignalMap::new(MapKind::Mst, 64, 576, 30.0, vec![0.5; 64 * 576], vec![]).unwrap();
        let s = stack_square(&map, 3, 1).unwrap();
        assert_eq!((s.height(), s.width(), s.channels()), (192, 192, 1));

        let map =
            SignalMap::new(MapKind::Mst, 378, 576, 30.0, vec![0.5; 378 * 576], vec![]).unwrap();
        let s = stack_square(&map, 3, 6).unwrap();
        assert_eq!((s.height(), s.width(), s.channels()), (189, 192, 6));

        let bad = SignalMap::new(MapKind::Mst, 2, 10, 30.0, vec![0.0; 20], vec![]).unwrap();
        assert!(stack_square(&bad, 3, 1).is_err());
    }

    #[test]
    fn chunk_zero_on_top() {
        // one row, values equal to time index
        let data: Vec<f32> = (0..12).map(|t| t as f32).collect();
        let map = SignalMap::new(MapKind::Mst, 1, 12, 30.0, data, vec![]).unwrap();
        let s = stack_square(&map, 3, 1).unwrap();
        assert_eq!(s.image(), &[0., 1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11.]);
        let p = s.pad_to(4, 6).unwrap();
        assert_eq!(
            p.image(),
            &[
                0., 1., 2., 3., 3., 3., //
                4., 5., 6., 7., 7., 7., //
                8., 9., 10., 11., 11., 11., //
                8., 9., 10., 11., 11., 11.
            ]
        );
        assert_eq!(unstack(&p).unwrap(), map);
    }

    #[test]
    fn corrupt_layout_is_format_error() {
        let map = SignalMap::new(MapKind::Mst, 2, 6, 30.0, vec![0.0; 12], vec![]).unwrap();
        let mut s = stack_square(&map, 3, 1).unwrap();
        s.layout.chunk_len = 5;
        assert!(matches!(unstack(&s), Err(Error::Format(_))));
    }

    #[test]
    fn windowing_examples() {
        assert_eq!(window_starts(636, 576, 30).unwrap(), vec![0, 30, 60]);
        assert_eq!(window_starts(1152, 576, 576).unwrap(), vec![0, 576]);
        assert!(window_starts(500, 576, 30).unwrap().is_empty());
        let traces = traces_from(vec![vec![vec![1.0; 500]]], 30.0);
        let w = window_samples(&traces, 576, 30).unwrap();
        assert!(w.too_short && w.windows.is_empty());
        let traces = traces_from(vec![vec![(0..636).map(|v| v as f64).collect()]], 30.0);
        let w = window_samples(&traces, 576, 30).unwrap();
        assert_eq!(w.windows.len(), 3);
        assert_eq!(w.windows[2].trace(0, 0)[0], 60.0);
    }

    proptest! {
        #[test]
        fn stack_round_trip(
            subsets in 1usize..6,
            fold in 1usize..4,
            chunk_len in 1usize..20,
            chunks in 1usize..4,
            extra_h in 0usize..5,
            extra_w in 0usize..5,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n_rows = subsets * fold;
            let len = chunk_len * chunks;
            let data: Vec<f32> = (0..n_rows * len).map(|_| rng.gen()).collect();
            let map = SignalMap::new(MapKind::Mst, n_rows, len, 30.0, data, vec![]).unwrap();
            let s = stack_square(&map, chunks, fold).unwrap();
            prop_assert_eq!(s.height(), chunks * subsets);
            prop_assert_eq!(&unstack(&s).unwrap(), &map);
            let p = s.pad_to(s.height() + extra_h, s.width() + extra_w).unwrap();
            prop_assert_eq!(&unstack(&p).unwrap(), &map);
        }
    }
}
