//! Binary map files: 8-byte magic, little-endian `u32` header length, JSON
//! header, then little-endian `f32` payload in row-major order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MapKind, RowLabel, SignalMap, StackLayout, StackedMap};
use crate::{Error, Result};

pub const MAP_MAGIC: &[u8; 8] = b"PSUMAP01";

/// Either kind of map that can live in a map file.
#[derive(Debug, Clone, PartialEq)]
pub enum MapFile {
    Signal(SignalMap),
    Stacked(StackedMap),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: MapKind,
    shape: Vec<usize>,
    fs: f64,
    #[serde(default)]
    layout: Option<StackLayout>,
    #[serde(default)]
    row_index: Vec<RowLabel>,
}

pub fn write_map(path: &Path, map: &MapFile) -> Result<()> {
    let (header, data) = match map {
        MapFile::Signal(m) => (
            Header {
                kind: m.kind(),
                shape: vec![m.n_rows(), m.len()],
                fs: m.fs(),
                layout: None,
                row_index: m.row_index().to_vec(),
            },
            m.data(),
        ),
        MapFile::Stacked(s) => (
            Header {
                kind: s.kind(),
                shape: vec![s.height(), s.width(), s.channels()],
                fs: s.fs(),
                layout: Some(s.layout().clone()),
                row_index: s.row_index().to_vec(),
            },
            s.image(),
        ),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + 4 * data.len());
    buf.extend_from_slice(MAP_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_map(path: &Path) -> Result<MapFile> {
    decode(&std::fs::read(path)?)
}

fn decode(bytes: &[u8]) -> Result<MapFile> {
    if bytes.len() < 12 || &bytes[..8] != MAP_MAGIC {
        return Err(Error::format("not a map file (bad magic)"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(Error::format("truncated map header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::format(format!("bad map header: {e}")))?;
    let payload = &body[hlen..];
    let count: usize = header.shape.iter().product();
    if payload.len() != 4 * count {
        return Err(Error::format(format!(
            "map payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            header.shape,
            4 * count
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let shape_err = || Error::format(format!("bad map shape {:?}", header.shape));
    match header.layout {
        None => {
            let [rows, len] = header.shape[..] else {
                return Err(shape_err());
            };
            SignalMap::new(header.kind, rows, len, header.fs, data, header.row_index)
                .map(MapFile::Signal)
                .map_err(|e| Error::format(e.to_string()))
        }
        Some(layout) => {
            if header.shape != [layout.height, layout.width, layout.fold] {
                return Err(shape_err());
            }
            StackedMap::from_parts(header.kind, header.fs, data, layout, header.row_index)
                .map(MapFile::Stacked)
        }
    }
}
