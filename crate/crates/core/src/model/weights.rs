//! Binary weights file:
//!
//! ```text
//! "CAE1" | u32 LE manifest length | JSON manifest | LE payload | u32 LE CRC32(payload)
//! ```
//!
//! The payload holds every tensor in manifest order, each in its declared dtype.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchitectureConfig, Model};
use crate::engine::{Real, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CAE1";

/// Departures from the reference layer description recorded in every manifest.
pub const DEVIATION_FLAGS: &[&str] = &["linear_output_layer", "relu_at_bottleneck"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

impl TensorDescriptor {
    fn byte_len(&self) -> Result<usize> {
        let width = match self.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Weights(format!("unsupported dtype {other:?}"))),
        };
        Ok(self.shape.iter().product::<usize>() * width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub config: ArchitectureConfig,
    pub tensors: Vec<TensorDescriptor>,
    pub deviation_flags: Vec<String>,
}

pub fn encode_weights<S: Real>(model: &Model<S>) -> Result<Vec<u8>> {
    let manifest = WeightsManifest {
        config: model.config.clone(),
        tensors: model
            .tensors()
            .map(|(name, t)| TensorDescriptor {
                name,
                shape: t.shape().to_vec(),
                dtype: S::DTYPE.to_string(),
            })
            .collect(),
        deviation_flags: DEVIATION_FLAGS.iter().map(|s| s.to_string()).collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut payload = Vec::with_capacity(model.count_parameters() * S::BYTES);
    for (_, t) in model.tensors() {
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    }
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

struct Parsed<'a> {
    manifest: WeightsManifest,
    payload: &'a [u8],
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Weights("missing CAE1 magic".into()));
    }
    let manifest_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let manifest_end = 8usize
        .checked_add(manifest_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Weights("truncated manifest".into()))?;
    let manifest: WeightsManifest =
        serde_json::from_slice(&bytes[8..manifest_end]).map_err(|e| Error::Weights(format!("manifest: {e}")))?;
    let payload_len = manifest
        .tensors
        .iter()
        .map(TensorDescriptor::byte_len)
        .sum::<Result<usize>>()?;
    let expected_total = manifest_end + payload_len + 4;
    if bytes.len() != expected_total {
        return Err(Error::Weights(format!(
            "expected {expected_total} bytes, found {}",
            bytes.len()
        )));
    }
    let payload = &bytes[manifest_end..manifest_end + payload_len];
    let stored = u32::from_le_bytes(bytes[expected_total - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(Parsed { manifest, payload })
}

/// Rebuilds a model from file bytes, verifying checksum and shapes.
///
/// When `expected` is given, the manifest's config must equal it.
pub fn decode_weights<S: Real>(bytes: &[u8], expected: Option<&ArchitectureConfig>) -> Result<Model<S>> {
    let Parsed { manifest, payload } = parse(bytes)?;
    if let Some(expected) = expected {
        if *expected != manifest.config {
            return Err(Error::ConfigMismatch(format!(
                "file has {:?}, expected {:?}",
                manifest.config, expected
            )));
        }
    }
    let mut model = Model::<S>::build(&manifest.config, 0).map_err(|e| Error::ConfigMismatch(e.to_string()))?;
    let layout: Vec<(String, Vec<usize>)> = model.tensors().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if layout.len() != manifest.tensors.len() {
        return Err(Error::ConfigMismatch(format!(
            "{} tensors in file, architecture has {}",
            manifest.tensors.len(),
            layout.len()
        )));
    }
    for ((name, shape), d) in layout.iter().zip(&manifest.tensors) {
        if *name != d.name || *shape != d.shape {
            return Err(Error::ConfigMismatch(format!(
                "tensor {} {:?} does not match architecture tensor {name} {shape:?}",
                d.name, d.shape
            )));
        }
    }
    let mut offset = 0;
    for (t, d) in model.tensors_mut().zip(&manifest.tensors) {
        let n = t.len();
        let values: Vec<S> = match d.dtype.as_str() {
            "f32" => payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|b| S::from_f64(f32::read_le(b) as f64))
                .collect(),
            _ => payload[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|b| S::from_f64(f64::read_le(b)))
                .collect(),
        };
        offset += d.byte_len()?;
        *t = Tensor::from_vec(&d.shape, values)?;
    }
    model.reset_optimizer();
    Ok(model)
}

pub fn save_weights<S: Real>(model: &Model<S>, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights<S: Real>(path: &Path, expected: Option<&ArchitectureConfig>) -> Result<Model<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, expected)
}

/// Stable identifier of a weights file: hex CRC32 of its payload.
pub fn weights_id(bytes: &[u8]) -> Result<String> {
    let parsed = parse(bytes)?;
    Ok(format!("{:08x}", crc32fast::hash(parsed.payload)))
}
