//! `TLM/1` weight files.
//!
//! Layout: one line of JSON header terminated by `\n`, followed by the raw
//! tensor data. The header is
//!
//! ```text
//! {"format":"TLM/1","config":{...},"tensors":[{"name":..,"shape":[..],"dtype":"f32","offset":..},...]}
//! ```
//!
//! `offset` is the byte offset of the tensor relative to the first byte after
//! the header line. Tensors are stored in manifest order as little-endian
//! `f32`, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{MoiError, Result};

pub const FORMAT_TAG: &str = "TLM/1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

pub fn save_weights(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let specs = Model::tensor_specs(model.config());
    let tensors = model.tensors();

    let mut offset = 0u64;
    let mut manifest = Vec::with_capacity(specs.len());
    for (spec, t) in specs.iter().zip(&tensors) {
        manifest.push(ManifestEntry {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            dtype: "f32".into(),
            offset,
        });
        offset += 4 * t.len() as u64;
    }
    let header = Header {
        format: FORMAT_TAG.into(),
        config: model.config().clone(),
        tensors: manifest,
    };

    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.reserve(offset as usize);
    for t in tensors {
        for x in t {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| MoiError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| MoiError::io(path, e))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MoiError::io(path, e))?;
    let loc = path.display().to_string();

    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| MoiError::parse(&loc, "missing header line"))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| MoiError::parse(format!("{loc} header"), e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(MoiError::parse(
            &loc,
            format!("unsupported format `{}`, expected {FORMAT_TAG}", header.format),
        ));
    }
    let data = &bytes[split + 1..];

    let mut model = Model::zeros(header.config)?;
    let specs = Model::tensor_specs(model.config());
    for (spec, tensor) in specs.iter().zip(model.tensors_mut()) {
        let entry = header
            .tensors
            .iter()
            .find(|e| e.name == spec.name)
            .ok_or_else(|| MoiError::parse(format!("{loc} tensor `{}`", spec.name), "missing from manifest"))?;
        if entry.dtype != "f32" {
            return Err(MoiError::parse(
                format!("{loc} tensor `{}`", spec.name),
                format!("unsupported dtype `{}`", entry.dtype),
            ));
        }
        if entry.shape != spec.shape {
            return Err(MoiError::Shape {
                tensor: spec.name.clone(),
                expected: spec.shape.clone(),
                found: entry.shape.clone(),
            });
        }
        let start = entry.offset as usize;
        let end = start + 4 * tensor.len();
        let raw = data.get(start..end).ok_or_else(|| {
            MoiError::parse(
                format!("{loc} tensor `{}`", spec.name),
                format!("truncated: needs bytes {start}..{end}, file has {}", data.len()),
            )
        })?;
        for (x, chunk) in tensor.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        if let Some(bad) = tensor.iter().position(|x| !x.is_finite()) {
            return Err(MoiError::parse(
                format!("{loc} tensor `{}`", spec.name),
                format!("non-finite value at element {bad}"),
            ));
        }
    }
    if let Some(extra) = header.tensors.iter().find(|e| !specs.iter().any(|s| s.name == e.name)) {
        return Err(MoiError::parse(&loc, format!("unexpected tensor `{}`", extra.name)));
    }
    Ok(model)
}
