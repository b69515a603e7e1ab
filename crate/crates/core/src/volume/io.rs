//! Raw volume files and 16-bit graymap slice export.
//!
//! A volume is stored as two files next to each other: `<stem>.json`, the
//! header, and `<stem>.raw`, exactly `n0 * n1 * n2` little-endian `f32`
//! values in C order (axis 0 slowest).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Geometry, Image2D, Volume};
use crate::error::{Error, Result};

pub const INDEX_ORDER: &str = "C (axis 0 slowest, axis 2 fastest)";
pub const VALUE_TYPE: &str = "float32 little-endian";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub index_order: String,
    pub axis_labels: [String; 3],
    pub phase_encode_axis: usize,
    pub value_type: String,
    /// Payload file name, relative to the header.
    pub payload: String,
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("raw"))
}

/// Writes `<stem>.json` and `<stem>.raw`. Returns the header path.
pub fn write_volume(stem: &Path, v: &Volume) -> Result<PathBuf> {
    let (header_path, raw_path) = stem_paths(stem);
    let g = v.geometry();
    let header = VolumeHeader {
        dims: g.dims,
        spacing: g.spacing,
        index_order: INDEX_ORDER.to_string(),
        axis_labels: g.axis_labels.clone(),
        phase_encode_axis: g.phase_encode_axis,
        value_type: VALUE_TYPE.to_string(),
        payload: raw_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut bytes = Vec::with_capacity(v.data().len() * 4);
    for &x in v.data() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    write_json(&header_path, &header)?;
    Ok(header_path)
}

/// Reads a volume from its header path (or stem).
pub fn read_volume(path: &Path) -> Result<Volume> {
    let header_path = path.with_extension("json");
    let header: VolumeHeader = read_json(&header_path)?;
    if header.value_type != VALUE_TYPE {
        return Err(Error::format(
            &header_path,
            format!("unsupported value type {:?}", header.value_type),
        ));
    }
    if header.index_order != INDEX_ORDER {
        return Err(Error::format(
            &header_path,
            format!("unsupported index order {:?}", header.index_order),
        ));
    }
    let raw_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::format(
            &raw_path,
            format!("payload has {} bytes, dims {:?} need {}", bytes.len(), header.dims, n * 4),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let geometry = Geometry {
        dims: header.dims,
        spacing: header.spacing,
        axis_labels: header.axis_labels,
        phase_encode_axis: header.phase_encode_axis,
    };
    Volume::new(geometry, data)
}

/// Linear map applied when exporting a slice: `pixel = round((v - min) * scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmRescale {
    pub min: f64,
    pub max: f64,
    pub scale: f64,
}

/// Writes a binary 16-bit PGM (big-endian samples, maxval 65535) with
/// `[min, max]` of the image mapped linearly onto `[0, 65535]`, plus a
/// `<path>.json` sidecar holding the rescale.
pub fn write_pgm16(path: &Path, img: &Image2D) -> Result<PgmRescale> {
    let (min, max) = img
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = if max > min { 65535.0 / (max - min) } else { 0.0 };
    let mut out = Vec::with_capacity(32 + img.data().len() * 2);
    write!(out, "P5\n{} {}\n65535\n", img.width(), img.height()).expect("write to Vec");
    for &v in img.data() {
        let p = ((v - min) * scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&p.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let rescale = PgmRescale { min, max, scale };
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    write_json(Path::new(&sidecar), &rescale)?;
    Ok(rescale)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}
