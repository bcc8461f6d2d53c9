//! Per-ROI colour traces and their CSV + sidecar JSON file format.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channel means over time for each facial region, stored `[roi][channel][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTraceSet {
    values: Vec<f64>,
    n_rois: usize,
    n_channels: usize,
    len: usize,
    fs: f64,
    subject_id: String,
    channel_names: Vec<String>,
}

/// Metadata stored next to a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub fs: f64,
    pub subject_id: String,
    pub channel_names: Vec<String>,
}

impl RoiTraceSet {
    pub fn new(
        values: Vec<f64>,
        n_rois: usize,
        n_channels: usize,
        fs: f64,
        subject_id: String,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if n_rois == 0 || n_channels == 0 {
            return Err(Error::invalid("trace set needs at least one ROI and one channel"));
        }
        if channel_names.len() != n_channels {
            return Err(Error::invalid(format!(
                "{} channel names for {n_channels} channels",
                channel_names.len()
            )));
        }
        if !values.len().is_multiple_of(n_rois * n_channels) || values.is_empty() {
            return Err(Error::invalid("trace values do not fill a rois x channels x frames block"));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite trace value at flat index {i}")));
        }
        let len = values.len() / (n_rois * n_channels);
        Ok(Self { values, n_rois, n_channels, len, fs, subject_id, channel_names })
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c.eq_ignore_ascii_case(name))
    }

    pub fn trace(&self, roi: usize, channel: usize) -> &[f64] {
        let start = (roi * self.n_channels + channel) * self.len;
        &self.values[start..start + self.len]
    }

    /// Frame-wise mean of one channel over a set of ROIs.
    pub fn subset_mean(&self, rois: &[usize], channel: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for &r in rois {
            for (o, v) in out.iter_mut().zip(self.trace(r, channel)) {
                *o += v;
            }
        }
        let k = rois.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }

    /// Mean of one channel over every ROI.
    pub fn all_roi_mean(&self, channel: usize) -> Vec<f64> {
        let all: Vec<usize> = (0..self.n_rois).collect();
        self.subset_mean(&all, channel)
    }

    /// Frames `start..start + len` as a new trace set.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len {
            return Err(Error::invalid(format!(
                "window {start}..{} outside {} frames",
                start + len,
                self.len
            )));
        }
        let mut values = Vec::with_capacity(self.n_rois * self.n_channels * len);
        for r in 0..self.n_rois {
            for c in 0..self.n_channels {
                values.extend_from_slice(&self.trace(r, c)[start..start + len]);
            }
        }
        Ok(Self { values, len, ..self.clone() })
    }

    pub fn sidecar(&self) -> TraceSidecar {
        TraceSidecar {
            fs: self.fs,
            subject_id: self.subject_id.clone(),
            channel_names: self.channel_names.clone(),
        }
    }
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    frame: usize,
    roi: usize,
    channel: String,
    value: f64,
}

/// Writes `frame,roi,channel,value` rows (channel by name) and the sidecar
/// JSON next to `path` with a `.json` extension.
pub fn write_traces(path: &Path, traces: &RoiTraceSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for f in 0..traces.len {
        for r in 0..traces.n_rois {
            for c in 0..traces.n_channels {
                w.serialize(TraceRecord {
                    frame: f,
                    roi: r,
                    channel: traces.channel_names[c].clone(),
                    value: traces.trace(r, c)[f],
                })?;
            }
        }
    }
    w.flush()?;
    let side = serde_json::to_string_pretty(&traces.sidecar())?;
    std::fs::write(sidecar_path(path), side)?;
    Ok(())
}

/// Reads a trace CSV and its sidecar. The channel column may hold a channel
/// name from the sidecar or a zero-based index. Every (frame, roi, channel)
/// cell must appear exactly once.
pub fn read_traces(path: &Path) -> Result<RoiTraceSet> {
    let side: TraceSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let n_ch = side.channel_names.len();
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    let expected = ["frame", "roi", "channel", "value"];
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::format(format!("unexpected trace header {headers:?}")));
    }

    let mut cells: Vec<(usize, usize, usize, f64)> = Vec::new();
    let (mut max_frame, mut max_roi) = (0usize, 0usize);
    for rec in rd.deserialize() {
        let rec: TraceRecord = rec?;
        let channel = match side.channel_names.iter().position(|c| *c == rec.channel) {
            Some(c) => c,
            None => rec
                .channel
                .parse::<usize>()
                .ok()
                .filter(|&c| c < n_ch)
                .ok_or_else(|| Error::format(format!("unknown channel {:?}", rec.channel)))?,
        };
        max_frame = max_frame.max(rec.frame);
        max_roi = max_roi.max(rec.roi);
        cells.push((rec.frame, rec.roi, channel, rec.value));
    }
    if cells.is_empty() {
        return Err(Error::format("trace file has no rows"));
    }
    let (len, n_rois) = (max_frame + 1, max_roi + 1);
    let total = len * n_rois * n_ch;
    if cells.len() != total {
        return Err(Error::format(format!(
            "expected {total} trace cells ({len} frames x {n_rois} rois x {n_ch} channels), got {}",
            cells.len()
        )));
    }
    let mut values = vec![f64::NAN; total];
    let mut seen = vec![false; total];
    for (f, r, c, v) in cells {
        let i = (r * n_ch + c) * len + f;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::format(format!("duplicate cell frame {f} roi {r} channel {c}")));
        }
        values[i] = v;
    }
    RoiTraceSet::new(values, n_rois, n_ch, side.fs, side.subject_id, side.channel_names)
}
