//! Weight files: `<stem>.json` manifest plus `<stem>.bin`, every weight and
//! bias as little-endian `f32` in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{LayerBlock, NetworkConfig, NetworkParameters};
use crate::error::{Error, Result};
use crate::volume::io::{read_json, write_json};

const VALUE_TYPE: &str = "float32 little-endian";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub position: usize,
    pub name: String,
    pub weight_shape: [usize; 4],
    pub weight_offset: usize,
    pub bias_len: usize,
    pub bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub config: NetworkConfig,
    pub seed: u64,
    pub value_type: String,
    pub payload: String,
    pub payload_bytes: usize,
    pub layers: Vec<WeightEntry>,
}

pub fn write_weights(stem: &Path, p: &NetworkParameters) -> Result<PathBuf> {
    let manifest_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let mut bytes = Vec::with_capacity(p.parameter_count() * 4);
    let mut layers = Vec::with_capacity(p.blocks.len());
    for (entry, blk) in p.layout().into_iter().zip(&p.blocks) {
        let weight_offset = bytes.len();
        bytes.extend(blk.weights.iter().flat_map(|&v| (v as f32).to_le_bytes()));
        let bias_offset = bytes.len();
        bytes.extend(blk.bias.iter().flat_map(|&v| (v as f32).to_le_bytes()));
        layers.push(WeightEntry {
            position: entry.position,
            name: entry.name,
            weight_shape: entry.weight_shape,
            weight_offset,
            bias_len: entry.bias_len,
            bias_offset,
        });
    }
    let manifest = WeightManifest {
        config: p.config.clone(),
        seed: p.seed,
        value_type: VALUE_TYPE.into(),
        payload: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        payload_bytes: bytes.len(),
        layers,
    };
    fs::write(&bin_path, &bytes).map_err(|e| Error::io(&bin_path, e))?;
    write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

fn read_f32s(bytes: &[u8], offset: usize, len: usize, path: &Path) -> Result<Vec<f64>> {
    let end = offset + len * 4;
    if end > bytes.len() {
        return Err(Error::format(path, format!("payload too short for range {offset}..{end}")));
    }
    Ok(bytes[offset..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn read_weights(path: &Path) -> Result<NetworkParameters> {
    let manifest_path = path.with_extension("json");
    let m: WeightManifest = read_json(&manifest_path)?;
    if m.value_type != VALUE_TYPE {
        return Err(Error::format(&manifest_path, format!("unsupported value type {:?}", m.value_type)));
    }
    m.config
        .validate()
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    let bin_path = manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(&m.payload);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() != m.payload_bytes {
        return Err(Error::format(
            &bin_path,
            format!("expected {} bytes, found {}", m.payload_bytes, bytes.len()),
        ));
    }
    let specs = m.config.block_specs();
    if specs.len() != m.layers.len() {
        return Err(Error::format(&manifest_path, "layer count does not match config"));
    }
    let mut blocks = Vec::with_capacity(specs.len());
    for (spec, e) in specs.into_iter().zip(&m.layers) {
        if e.name != spec.name || e.weight_shape != spec.weight_shape() || e.bias_len != spec.out_ch {
            return Err(Error::format(&manifest_path, format!("layer {} does not match config", e.name)));
        }
        let weights = read_f32s(&bytes, e.weight_offset, spec.weight_len(), &bin_path)?;
        let bias = read_f32s(&bytes, e.bias_offset, e.bias_len, &bin_path)?;
        blocks.push(LayerBlock { spec, weights, bias });
    }
    let p = NetworkParameters {
        config: m.config,
        seed: m.seed,
        blocks,
    };
    p.validate().map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    Ok(p)
}
