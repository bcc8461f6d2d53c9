//! Acceptance checks, one PASS/FAIL line per criterion. Every expected value
//! comes from an independent oracle in this file or from the criterion's
//! pinned tolerance.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pulsebench::config::{band_midpoint_bpm, ExperimentConfig, MaskSpec};
use pulsebench::experiment::{fold_data, load_benchmark, run_baseline, run_supervised, subject_ids, train_fold, FoldData, RunSpec, Tuning};
use pulsebench::folds::kfold_split;
use pulsebench::masking::patch_mask;
use pulsebench::metrics::Metrics;
use pulsebench::report::FoldReport;
use pulsebench::selfsup::pretrain;
use pulsebench_core::losses::{l_freq, l_reg, l_temp, mcc, total_loss, LossConfig, LossWeights, Prediction, Target};
use pulsebench_core::mstmap::{
    read_map, read_traces, stack_square, unstack, write_map, write_traces, MapFile, MapKind, RoiTraceSet, RowLabel,
    SignalMap, StackLayout,
};
use pulsebench_core::rppg::Method;
use pulsebench_core::synth::{gen_benchmark, BenchmarkConfig, ChannelSet};
use pulsebench_core::{FreqBand, TimeSeries};
use pulsebench_model::attention::{WindowAttention, WindowGeom};
use pulsebench_model::params::ParameterStore;
use pulsebench_model::{checkpoint, Model, ModelConfig};

const FS: f64 = 30.0;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    /// Asserted by the process exit status.
    enforced: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, enforced: true, detail }
    }
}

/// Every metric produced by the run, for the RMSE >= MAE invariant.
#[derive(Default)]
struct Ledger {
    metrics: Vec<(String, Metrics)>,
    curves_finite: bool,
}

impl Ledger {
    fn fold(&mut self, name: &str, r: &FoldReport) {
        for (split, m) in [("train", r.train_metrics), ("test", r.test_metrics)] {
            if let Some(m) = m {
                self.metrics.push((format!("{name}/{split}"), m));
            }
        }
        self.curves_finite &= r
            .loss_curve
            .iter()
            .all(|s| [s.total, s.l_reg, s.l_temp, s.l_freq].iter().all(|v| v.is_finite()));
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Rows of a few in-band tones on exact DFT bins plus an offset.
fn band_limited(rows: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lo = (0.8 * len as f64 / FS).ceil() as usize;
    let hi = (2.9 * len as f64 / FS).floor() as usize;
    let mut out = Vec::with_capacity(rows * len);
    for _ in 0..rows {
        let tones: Vec<(f64, f64, f64)> = (0..3)
            .map(|i| {
                let amp = if i == 0 { 1.0 } else { rng.gen_range(0.0..0.5) };
                (rng.gen_range(lo..=hi) as f64, rng.gen_range(0.0..2.0 * PI), amp)
            })
            .collect();
        let offset = rng.gen_range(0.0..1.0);
        for t in 0..len {
            let w = 2.0 * PI * t as f64 / len as f64;
            out.push(offset + tones.iter().map(|(k, p, a)| a * (k * w + p).sin()).sum::<f64>());
        }
    }
    out
}

// ---------------------------------------------------------------- criterion 1

fn loss_formula() -> Outcome {
    let len = 576;
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut freq_ok, mut worst_temp, mut worst_sum, mut slowest) = (true, 0.0f64, 0.0f64, Duration::ZERO);
    for _ in 0..20 {
        let rows = rng.gen_range(1..=9);
        let x = band_limited(rows, len, &mut rng);
        let t = Instant::now();
        let f = l_freq(&x, &x, len, FS, cfg.freq_norm).unwrap();
        slowest = slowest.max(t.elapsed());
        freq_ok &= f.value == 0.0 && f.grad.iter().all(|g| *g == 0.0);
        let t = Instant::now();
        let (temp, _) = l_temp(&x, &x, len, FS, &cfg).unwrap();
        slowest = slowest.max(t.elapsed());
        worst_temp = worst_temp.max(temp.value);

        let p: Vec<f64> = (0..rows * len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (hp, hl) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let w = LossWeights { alpha: rng.gen_range(0.0..10.0), beta: rng.gen_range(0.0..10.0), gamma: rng.gen_range(0.0..10.0) };
        let t = Instant::now();
        let (b, _) = total_loss(
            Prediction { map: Some(&p), hr: Some(hp) },
            Target { map: Some(&x), hr: Some(hl), len, fs: FS },
            &w,
            &cfg,
        )
        .unwrap();
        slowest = slowest.max(t.elapsed());
        let parts = w.alpha * (hp - hl).abs()
            + w.beta * l_temp(&p, &x, len, FS, &cfg).unwrap().0.value
            + w.gamma * l_freq(&p, &x, len, FS, cfg.freq_norm).unwrap().value;
        worst_sum = worst_sum.max((b.total - parts).abs());
    }
    Outcome::new(
        freq_ok && worst_temp <= 0.02 && worst_sum <= 1e-12 && slowest < Duration::from_secs(1),
        format!(
            "l_freq(X,X)=0 exactly: {freq_ok}; max l_temp(X,X) {worst_temp:.2e} (<= 0.02); \
             max recombination error {worst_sum:.1e} (<= 1e-12); slowest check {:.3}s (< 1s)",
            secs(slowest)
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

/// Naive DFT with a shared twiddle table.
struct Dft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Dft {
    fn new(n: usize) -> Self {
        let a = |i: usize| 2.0 * PI * i as f64 / n as f64;
        Self { n, cos: (0..n).map(|i| a(i).cos()).collect(), sin: (0..n).map(|i| a(i).sin()).collect() }
    }

    fn forward(&self, x: &[f64]) -> Vec<(f64, f64)> {
        (0..self.n)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let i = (k * t) % self.n;
                    re += v * self.cos[i];
                    im -= v * self.sin[i];
                }
                (re, im)
            })
            .collect()
    }

    fn inverse_real(&self, s: &[(f64, f64)]) -> Vec<f64> {
        (0..self.n)
            .map(|t| {
                let mut acc = 0.0;
                for (k, (re, im)) in s.iter().enumerate() {
                    let i = (k * t) % self.n;
                    acc += re * self.cos[i] - im * self.sin[i];
                }
                acc / self.n as f64
            })
            .collect()
    }
}

/// MCC by brute force: band-limit by zeroing DFT bins, search every lag of
/// the circular cross-correlation directly, scale by the in-band share of
/// the cross-spectrum magnitude.
fn mcc_oracle(dft: &Dft, x: &[f64], y: &[f64], band: FreqBand, max_lag_s: f64) -> f64 {
    let n = x.len();
    let centre = |v: &[f64]| -> Vec<f64> {
        let m = v.iter().sum::<f64>() / n as f64;
        v.iter().map(|a| a - m).collect()
    };
    let (xs, ys) = (dft.forward(&centre(x)), dft.forward(&centre(y)));
    let inside = |k: usize| band.contains(k.min(n - k) as f64 * FS / n as f64);
    let keep = |s: &[(f64, f64)]| -> Vec<(f64, f64)> {
        s.iter().enumerate().map(|(k, &c)| if inside(k) { c } else { (0.0, 0.0) }).collect()
    };
    let (xb, yb) = (dft.inverse_real(&keep(&xs)), dft.inverse_real(&keep(&ys)));
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let (nx, ny) = (norm(&xb), norm(&yb));
    let lags = (max_lag_s * FS).round() as isize;
    assert!(2 * lags + 1 < n as isize);
    let mut best = f64::NEG_INFINITY;
    for l in -lags..=lags {
        let c: f64 = (0..n).map(|m| xb[(m as isize + l).rem_euclid(n as isize) as usize] * yb[m]).sum();
        best = best.max(c);
    }
    let mag = |c: (f64, f64)| (c.0 * c.0 + c.1 * c.1).sqrt();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 1..n {
        let p = mag(xs[k]) * mag(ys[k]);
        den += p;
        if inside(k) {
            num += p;
        }
    }
    (num / den) * best / (nx * ny)
}

fn roll(x: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| x[(i + n - k % n) % n]).collect()
}

fn mcc_invariance() -> Outcome {
    let len = 576;
    let dft = Dft::new(len);
    let max_lag = LossConfig::default().max_lag_s;
    let ts = |v: &[f64]| TimeSeries::new(v.to_vec(), FS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_shift, mut worst_oracle, mut pairs) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..6 {
        let x = band_limited(1, len, &mut rng);
        let base = mcc(&ts(&x), &ts(&x), FreqBand::HR).unwrap();
        for k in 1..=60 {
            let y = roll(&x, k);
            let v = mcc(&ts(&x), &ts(&y), FreqBand::HR).unwrap();
            worst_shift = worst_shift.max((v - base).abs());
            if k % 6 == 0 {
                worst_oracle = worst_oracle.max((v - mcc_oracle(&dft, &x, &y, FreqBand::HR, max_lag)).abs());
                pairs += 1;
            }
        }
    }
    // Unrelated and noisy pairs exercise lags other than the true shift.
    for _ in 0..20 {
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = band_limited(1, len, &mut rng);
        let z: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        for (a, b) in [(&x, &y), (&z, &y), (&y, &z)] {
            let v = mcc(&ts(a), &ts(b), FreqBand::HR).unwrap();
            worst_oracle = worst_oracle.max((v - mcc_oracle(&dft, a, b, FreqBand::HR, max_lag)).abs());
            pairs += 1;
        }
    }
    Outcome::new(
        worst_shift <= 1e-6 && worst_oracle <= 1e-6,
        format!(
            "max |mcc(x,roll(x,k)) - mcc(x,x)| over k=1..60: {worst_shift:.1e}; \
             max deviation from brute-force oracle over {pairs} pairs: {worst_oracle:.1e} (<= 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

/// Largest central-difference error over all coordinates, relative to the
/// largest analytic gradient entry.
fn fd_error(x: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64, h: f64) -> f64 {
    let scale = grad.iter().fold(1e-12f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let fp = f(&p);
        p[i] = x[i] - h;
        let fm = f(&p);
        p[i] = x[i];
        worst = worst.max(((fp - fm) / (2.0 * h) - grad[i]).abs() / scale);
    }
    worst
}

fn tiny(seed: u64) -> ModelConfig {
    ModelConfig {
        input_hw: [48, 48],
        in_channels: 2,
        window_size: 3,
        embed_dim: 8,
        n_heads: vec![1, 2, 4],
        mlp_ratio: 2,
        head_channels: 4,
        seed,
        ..ModelConfig::default()
    }
}

/// Full-model `total_loss` against one random target; returns the worst
/// per-tensor relative error over a few sampled coordinates of every tensor.
/// The scale is floored at 1e-8: the map losses ignore per-channel offsets,
/// so the output bias gradient is zero up to rounding.
fn model_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let mut m = Model::new(tiny(seed)).unwrap();
    for p in m.store.params_mut() {
        for v in &mut p.value {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let (rows, len) = (4, 144);
    let lay = StackLayout::new(rows, len, 3, 2).unwrap().padded(48, 48).unwrap();
    let x = lay.stack(&band_limited(rows, len, &mut rng).iter().map(|v| v * 0.3 + 0.5).collect::<Vec<_>>());
    let target = band_limited(rows, len, &mut rng);
    let label = rng.gen_range(0.0..1.0);
    let (w, cfg) = (LossWeights::default(), LossConfig::default());
    let loss = |m: &Model| -> f64 {
        let o = m.forward(&x).unwrap();
        let pred = lay.unstack(&o.map.unwrap());
        let t = Target { map: Some(&target), hr: Some(label), len, fs: FS };
        total_loss(Prediction { map: Some(&pred), hr: o.hr }, t, &w, &cfg).unwrap().0.total
    };
    m.store.zero_grad();
    let (o, cache) = m.forward_train(&x).unwrap();
    let pred = lay.unstack(o.map.as_ref().unwrap());
    let t = Target { map: Some(&target), hr: Some(label), len, fs: FS };
    let (_, g) = total_loss(Prediction { map: Some(&pred), hr: o.hr }, t, &w, &cfg).unwrap();
    m.backward(&cache, Some(&lay.scatter_rows(&g.map)), Some(g.hr)).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for pi in 0..m.store.len() {
        let n = m.store.params()[pi].value.len();
        let scale = m.store.params()[pi].grad.iter().fold(1e-8f64, |a, g| a.max(g.abs()));
        for _ in 0..3.min(n) {
            let i = rng.gen_range(0..n);
            let orig = m.store.params()[pi].value[i];
            m.store.params_mut()[pi].value[i] = orig + h;
            let fp = loss(&m);
            m.store.params_mut()[pi].value[i] = orig - h;
            let fm = loss(&m);
            m.store.params_mut()[pi].value[i] = orig;
            let a = m.store.params()[pi].grad[i];
            worst = worst.max(((fp - fm) / (2.0 * h) - a).abs() / scale);
        }
    }
    worst
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = LossConfig::default();
    let len = 64;
    let (mut temp, mut freq, mut reg, mut full) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2 * len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y = band_limited(2, len, &mut rng);
        let g = l_temp(&x, &y, len, FS, &cfg).unwrap().0.grad;
        temp = temp.max(fd_error(&x, &g, |p| l_temp(p, &y, len, FS, &cfg).unwrap().0.value, 1e-6));
        let g = l_freq(&x, &y, len, FS, cfg.freq_norm).unwrap().grad;
        freq = freq.max(fd_error(&x, &g, |p| l_freq(p, &y, len, FS, cfg.freq_norm).unwrap().value, 1e-6));
        let (p, l) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        reg = reg.max(fd_error(&[p], &[l_reg(p, l).1], |v| l_reg(v[0], l).0, 1e-6));
        full = full.max(model_fd_error(seed));
    }
    let took = start.elapsed();
    Outcome::new(
        temp <= 1e-4 && freq <= 1e-4 && reg <= 1e-4 && full <= 1e-3 && took < Duration::from_secs(300),
        format!(
            "20 seeds: l_temp {temp:.1e}, l_freq {freq:.1e}, l_reg {reg:.1e} (<= 1e-4); \
             full model {full:.1e} (<= 1e-3); {:.1}s (< 300s)",
            secs(took)
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

/// Plain softmax attention over every token pair, read from raw parameters.
fn dense_attention(s: &ParameterStore, name: &str, h: usize, w: usize, d: usize, nh: usize, x: &[f64]) -> Vec<f64> {
    let p = |n: &str| s.by_name(&format!("{name}.{n}")).unwrap().value.clone();
    let (wq, bq, wp, bp, table) =
        (p("qkv.weight"), p("qkv.bias"), p("proj.weight"), p("proj.bias"), p("relative_position_bias_table"));
    let n = h * w;
    let hd = d / nh;
    let linear = |wt: &[f64], b: &[f64], v: &[f64], d_out: usize| -> Vec<f64> {
        (0..d_out).map(|o| b[o] + (0..d).map(|i| wt[o * d + i] * v[i]).sum::<f64>()).collect()
    };
    let qkv: Vec<Vec<f64>> = (0..n).map(|t| linear(&wq, &bq, &x[t * d..(t + 1) * d], 3 * d)).collect();
    let mut mixed = vec![0.0; n * d];
    for head in 0..nh {
        for a in 0..n {
            let (ya, xa) = (a / w, a % w);
            let logits: Vec<f64> = (0..n)
                .map(|b| {
                    let (yb, xb) = (b / w, b % w);
                    let rel = (ya + h - 1 - yb) * (2 * w - 1) + (xa + w - 1 - xb);
                    let qk: f64 = (0..hd).map(|c| qkv[a][head * hd + c] * qkv[b][d + head * hd + c]).sum();
                    qk / (hd as f64).sqrt() + table[rel * nh + head]
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..hd {
                mixed[a * d + head * hd + c] = (0..n).map(|b| e[b] / z * qkv[b][2 * d + head * hd + c]).sum();
            }
        }
    }
    (0..n).flat_map(|t| linear(&wp, &bp, &mixed[t * d..(t + 1) * d], d)).collect()
}

fn attention_error() -> f64 {
    let mut worst = 0.0f64;
    let cases = [(8, 8, 8, 2), (4, 8, 12, 3), (8, 2, 8, 4), (3, 5, 6, 1), (1, 7, 4, 2), (6, 6, 16, 4)];
    for (i, &(h, w, d, nh)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let mut s = ParameterStore::new();
        let geom = WindowGeom::new(h, w, 8, true).unwrap();
        assert_eq!(geom.n_windows(), 1);
        let a = WindowAttention::new(&mut s, "attn", d, nh, geom, true, &mut rng).unwrap();
        for p in s.params_mut() {
            for v in &mut p.value {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let x: Vec<f64> = (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, _) = a.forward(&s, &x);
        let dense = dense_attention(&s, "attn", h, w, d, nh, &x);
        worst = y.iter().zip(&dense).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    worst
}

fn random_map(rng: &mut ChaCha8Rng, n_rows: usize, len: usize, kind: MapKind) -> SignalMap {
    let data: Vec<f32> = (0..n_rows * len).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect();
    let rows = (0..n_rows).map(|r| RowLabel { subset: vec![r], channel: r % 3 }).collect();
    SignalMap::new(kind, n_rows, len, FS, data, rows).unwrap()
}

fn round_trips(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(PropConfig { cases, ..PropConfig::default() });
    let dims = (1usize..7, 1usize..4, 1usize..30, 1usize..5, 0usize..5, 0usize..5, any::<u64>());
    runner
        .run(&dims, |(subsets, fold, chunk_len, chunks, eh, ew, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(&mut rng, subsets * fold, chunk_len * chunks, MapKind::Mst);
            let s = stack_square(&map, chunks, fold).unwrap().pad_to(chunks * subsets + eh, chunk_len + ew).unwrap();
            let back = unstack(&s).unwrap();
            let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.data()), bits(map.data()));
            prop_assert_eq!(back.row_index(), map.row_index());

            let dir = tempfile::tempdir().unwrap();
            for file in [MapFile::Signal(map.clone()), MapFile::Stacked(s)] {
                let path = dir.path().join("m.map");
                write_map(&path, &file).unwrap();
                let read = read_map(&path).unwrap();
                let image = |f: &MapFile| match f {
                    MapFile::Signal(m) => bits(m.data()),
                    MapFile::Stacked(s) => bits(s.image()),
                };
                prop_assert_eq!(image(&read), image(&file));
                prop_assert_eq!(read, file);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let mut runner = TestRunner::new(PropConfig { cases, ..PropConfig::default() });
    runner
        .run(&(1usize..4, 2usize..40, any::<u64>()), |(n_rois, frames, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..n_rois * 3 * frames).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let names = ["R", "G", "B"].map(String::from).to_vec();
            let t = RoiTraceSet::new(values, n_rois, 3, FS, "s".to_string(), names).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.csv");
            write_traces(&path, &t).unwrap();
            prop_assert_eq!(read_traces(&path).unwrap(), t);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let base = Model::new(tiny(0)).unwrap();
    let mut runner = TestRunner::new(PropConfig { cases, ..PropConfig::default() });
    runner
        .run(&any::<u64>(), |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = base.clone();
            for p in model.store.params_mut() {
                for v in &mut p.value {
                    *v = rng.gen_range(-3.0f32..3.0) as f64;
                }
            }
            let bytes = checkpoint::to_bytes(&model).unwrap();
            let back = checkpoint::from_bytes(&bytes).unwrap();
            for (a, b) in back.store.params().iter().zip(model.store.params()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert!(a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            prop_assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(())
}

fn oracle_equivalence() -> Outcome {
    let attn = attention_error();
    let trips = round_trips(1000);
    Outcome::new(
        attn <= 1e-6 && trips.is_ok(),
        format!(
            "single-window vs dense attention max |diff| {attn:.1e} (<= 1e-6); \
             stack/unstack, map file, trace CSV and checkpoint round trips over 1000 cases each: {}",
            match &trips {
                Ok(()) => "bit-exact".to_string(),
                Err(e) => e.clone(),
            }
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn traditional(ledger: &mut Ledger) -> Outcome {
    let start = Instant::now();
    let cfg = BenchmarkConfig {
        n_subjects: 10,
        windows_per_subject: 2,
        channels: ChannelSet::Rgb,
        noise_range: (0.5, 0.5),
        ..BenchmarkConfig::default()
    };
    let b = gen_benchmark(&cfg).unwrap();
    let r = run_baseline(&b, cfg.window_frames, &[Method::Chrom, Method::Pos, Method::Green]).unwrap();
    let took = start.elapsed();
    let mut pass = took < Duration::from_secs(60);
    let mut parts = Vec::new();
    for row in &r.rows {
        let tol = if row.method == Method::Green { 3.0 } else { 2.0 };
        pass &= row.metrics.mae <= tol;
        parts.push(format!("{} {:.2} (<= {tol})", row.method, row.metrics.mae));
        ledger.metrics.push((format!("baseline/{}", row.method), row.metrics));
    }
    Outcome::new(pass, format!("window MAE over {} windows: {}; {:.1}s (< 60s)", r.rows[0].metrics.n, parts.join(", "), secs(took)))
}

// ---------------------------------------------------------------- criterion 6

/// Smallest `z` with `tests * P(|Z| > z) <= alpha`, bounding the normal
/// tail by `2 phi(z) / z`.
fn bonferroni_z(tests: usize, alpha: f64) -> f64 {
    let tail = |z: f64| 2.0 * (-z * z / 2.0).exp() / ((2.0 * PI).sqrt() * z);
    let (mut lo, mut hi) = (1.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tests as f64 * tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn masking() -> (Outcome, Outcome) {
    let (side, patch, seeds) = (192, 4, 10_000u64);
    let n = (side / patch) * (side / patch);
    let mut counts = vec![0u64; n];
    let mut exact = true;
    for seed in 0..seeds {
        let spec = MaskSpec { ratio: 0.75, patch, seed };
        let m = patch_mask(side, side, &spec, 0).unwrap();
        exact &= m.len() == n && m.iter().filter(|b| **b).count() == 1728;
        for (c, &b) in counts.iter_mut().zip(&m) {
            *c += b as u64;
        }
    }
    let p = 1728.0 / n as f64;
    let mean = seeds as f64 * p;
    let sd = (seeds as f64 * p * (1.0 - p)).sqrt();
    let z: Vec<f64> = counts.iter().map(|&c| (c as f64 - mean) / sd).collect();
    let outside = z.iter().filter(|v| v.abs() > 3.0).count();
    let max_z = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Under uniform masking each patch leaves +-3 sd with probability 0.0027.
    let expected_outside = n as f64 * 0.0027;
    let zb = bonferroni_z(n, 0.01);
    let literal = Outcome {
        pass: exact && outside == 0,
        enforced: false,
        detail: format!(
            "exactly 1728 of {n} patches for all {seeds} seeds: {exact}; patches outside +-3 sd: {outside} \
             (about {expected_outside:.1} expected by chance for a uniform sampler; literal check not enforced)"
        ),
    };
    let corrected = Outcome::new(
        exact && max_z <= zb,
        format!("exact count: {exact}; max |z| over {n} patches {max_z:.2} (family-wise 1% bound {zb:.2})"),
    );
    (literal, corrected)
}

// ------------------------------------------------------------ criteria 7 and 8

fn seeded(mut cfg: ExperimentConfig, seed: u64) -> ExperimentConfig {
    cfg.train.seed = seed;
    cfg.model.seed = seed;
    cfg
}

fn fold0(cfg: &ExperimentConfig) -> FoldData {
    let b = load_benchmark(cfg).unwrap();
    let folds = kfold_split(&subject_ids(&b), cfg.folds, cfg.fold_seed).unwrap();
    let (tr, te) = folds.split(0);
    fold_data(&b, cfg, &tr, &te).unwrap()
}

fn test_mae(r: &FoldReport) -> f64 {
    r.test_metrics.map_or(f64::NAN, |m| m.mae)
}

struct Learning {
    overfit: Outcome,
    length: Outcome,
    transfer: Outcome,
    probe: Outcome,
}

fn learning(ledger: &mut Ledger) -> Learning {
    let desk = ExperimentConfig::desk();

    let mut over = desk.clone();
    over.benchmark.n_subjects = 10;
    over.benchmark.windows_per_subject = 1;
    over.train.stride = over.train.window;
    over.train.batch = 8;
    over.train.epochs = 300;
    over.train.max_steps = Some(300);
    let b = load_benchmark(&over).unwrap();
    let ids = subject_ids(&b);
    let data = fold_data(&b, &over, &ids[..8], &ids[8..]).unwrap();
    let (_, r) = train_fold(&over, &data, None, Tuning::Full, over.train.epochs).unwrap();
    ledger.fold("overfit", &r);
    let train_mae = r.train_metrics.map_or(f64::NAN, |m| m.mae);
    let overfit = Outcome::new(
        data.train.len() == 8 && r.loss_curve.len() <= 300 && train_mae < 3.0,
        format!("{} samples, {} steps, train MAE {train_mae:.2} (< 3)", data.train.len(), r.loss_curve.len()),
    );

    let long_data = fold0(&desk);
    let mut short_cfg = desk.clone();
    short_cfg.train.window = 255;
    let short_data = fold0(&short_cfg);
    let pre_bench = gen_benchmark(&desk.pretrain_benchmark()).unwrap();
    let (mut long, mut short, mut transfer, mut scratch) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut probe_model = None;
    for seed in SEEDS {
        let cfg = seeded(desk.clone(), seed);
        let (_, r) = train_fold(&cfg, &long_data, None, Tuning::Full, cfg.train.epochs).unwrap();
        ledger.fold(&format!("scratch576/{seed}"), &r);
        long.push(test_mae(&r));
        scratch.push(test_mae(&r));

        let scfg = seeded(short_cfg.clone(), seed);
        let (_, r) = train_fold(&scfg, &short_data, None, Tuning::Full, scfg.train.epochs).unwrap();
        ledger.fold(&format!("scratch255/{seed}"), &r);
        short.push(test_mae(&r));

        let (pm, pre) = pretrain(&pre_bench, &cfg, None).unwrap();
        ledger.fold(&format!("pretrain/{seed}"), &pre.folds[0]);
        let (_, r) = train_fold(&cfg, &long_data, Some(&pm), Tuning::Full, cfg.train.finetune_epochs).unwrap();
        ledger.fold(&format!("transfer/{seed}"), &r);
        transfer.push(test_mae(&r));
        if probe_model.is_none() {
            probe_model = Some(pm);
        }
    }
    let (ml, ms) = (median(long.clone()), median(short.clone()));
    let length = Outcome::new(
        ml <= ms,
        format!("median test MAE T=576 {ml:.2} <= T=255 {ms:.2} (per seed {long:.2?} vs {short:.2?})"),
    );
    let (mt, mscr) = (median(transfer.clone()), median(scratch.clone()));
    let transfer_out = Outcome::new(
        mt <= mscr,
        format!(
            "median test MAE transfer {mt:.2} <= scratch {mscr:.2} at {} fine-tune steps (per seed {transfer:.2?} vs {scratch:.2?})",
            desk.train.max_steps.unwrap()
        ),
    );

    let pm = probe_model.unwrap();
    let (probed, r) = train_fold(&desk, &long_data, Some(&pm), Tuning::Probe, desk.train.finetune_epochs).unwrap();
    ledger.fold("probe", &r);
    let frozen = probed
        .store
        .params()
        .iter()
        .zip(pm.store.params())
        .filter(|(p, _)| !p.name.starts_with("hr_head.fc"))
        .all(|(a, b)| a.name == b.name && a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits()));
    let moved = probed.store.params().iter().zip(pm.store.params()).any(|(a, b)| a.value != b.value);
    let m = r.test_metrics.unwrap();
    let truths = long_data.test.truths().unwrap();
    let chance = truths.iter().map(|t| (t - band_midpoint_bpm()).abs()).sum::<f64>() / truths.len() as f64;
    let probe = Outcome::new(
        m.mae.is_finite() && m.rmse.is_finite() && m.mae < 32.0 && frozen && moved,
        format!(
            "probe test MAE {:.2} (< 32; midpoint predictor scores {chance:.2} on this fold); \
             non-final parameters bit-frozen: {frozen}; final layer updated: {moved}",
            m.mae
        ),
    );
    Learning { overfit, length, transfer: transfer_out, probe }
}

// ---------------------------------------------------------------- criterion 9

fn protocol(ledger: &mut Ledger) -> Outcome {
    let mut runner = TestRunner::new(PropConfig { cases: 1000, ..PropConfig::default() });
    let leak = runner
        .run(&(2usize..60, 2usize..12, any::<u64>()), |(n, k, seed)| {
            let k = k.min(n);
            let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
            let f = kfold_split(&ids, k, seed).unwrap();
            for i in 0..k {
                let (tr, te) = f.split(i);
                prop_assert!(!te.is_empty());
                prop_assert!(tr.iter().all(|s| !te.contains(s)));
                prop_assert_eq!(tr.len() + te.len(), n);
            }
            let total: usize = f.folds.iter().map(|x| x.len()).sum();
            prop_assert_eq!(total, n);
            Ok(())
        })
        .map_err(|e| e.to_string());

    let data = fold0(&ExperimentConfig::desk());
    let subjects = |s: &pulsebench::data::SampleSet| -> Vec<String> { s.samples.iter().map(|x| x.subject.clone()).collect() };
    let (tr, te) = (subjects(&data.train), subjects(&data.test));
    let window_leak = tr.iter().any(|s| te.contains(s)) || subjects(&data.train_eval).iter().any(|s| te.contains(s));

    let cfg = common::micro();
    let b = load_benchmark(&cfg).unwrap();
    let a = run_supervised(&b, &cfg, RunSpec::scratch(&cfg), None).unwrap();
    let again = run_supervised(&b, &cfg, RunSpec::scratch(&cfg), None).unwrap();
    let pb = gen_benchmark(&cfg.pretrain_benchmark()).unwrap();
    let (_, p1) = pretrain(&pb, &cfg, None).unwrap();
    let (_, p2) = pretrain(&pb, &cfg, None).unwrap();
    let rerun = a == again && p1 == p2;
    for r in a.folds.iter().chain(&p1.folds) {
        ledger.fold("rerun", r);
    }
    if let Some(m) = a.pooled {
        ledger.metrics.push(("rerun/pooled".to_string(), m));
    }

    let bad: Vec<&str> = ledger.metrics.iter().filter(|(_, m)| m.rmse < m.mae).map(|(n, _)| n.as_str()).collect();
    Outcome::new(
        leak.is_ok() && !window_leak && rerun && bad.is_empty() && ledger.curves_finite,
        format!(
            "fold leakage over 1000 cases: {}; window-level leakage: {window_leak}; rerun reports identical: {rerun}; \
             RMSE >= MAE on {} of {} reports; loss curves finite: {}",
            match &leak {
                Ok(()) => "none".to_string(),
                Err(e) => e.clone(),
            },
            ledger.metrics.len() - bad.len(),
            ledger.metrics.len(),
            ledger.curves_finite
        ),
    )
}

fn report(id: &str, name: &str, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("{verdict} [{id}] {name}: {}", o.detail);
}

fn main() {
    let mut ledger = Ledger { curves_finite: true, ..Ledger::default() };
    let mut all = Vec::new();
    let mut run = |id: &str, name: &str, o: Outcome| {
        report(id, name, &o);
        all.push((id.to_string(), o));
    };
    run("1", "loss formulas", loss_formula());
    run("2", "MCC phase invariance", mcc_invariance());
    run("3", "gradient correctness", gradients());
    run("4", "oracle equivalence", oracle_equivalence());
    run("5", "traditional-method recovery", traditional(&mut ledger));
    let (literal, corrected) = masking();
    run("6", "masking exactness and per-patch frequency within +-3 sd", literal);
    run("6b", "masking exactness and per-patch frequency, family-wise", corrected);
    let l = learning(&mut ledger);
    run("7a", "overfit 8 samples", l.overfit);
    run("7b", "window length trend", l.length);
    run("8a", "transfer vs scratch", l.transfer);
    run("8b", "linear probe", l.probe);
    run("9", "protocol invariants", protocol(&mut ledger));

    let failed: Vec<&str> = all.iter().filter(|(_, o)| o.enforced && !o.pass).map(|(id, _)| id.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("acceptance failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
