//! Single-file checkpoint format.
//!
//! Layout: line 1 is a JSON manifest `{format, config, tensors: [{name,
//! shape}]}`, then a newline, then the named tensors' `f32` values
//! concatenated little-endian in manifest order, then an 8-byte little-endian
//! CRC-64 of that payload. The dataset scaler rides along as two extra named
//! arrays so forecasts can leave standardized space.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::data::ChannelScaler;
use crate::error::{Result, SoftsError};
use crate::model::{ModelConfig, SoftsModel};

pub const CHECKPOINT_FORMAT: &str = "softs-ckpt-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// CRC-64/ECMA-182: polynomial 0x42F0E1EBA9EA3693, MSB-first, zero init and
/// xorout.
pub fn crc64(bytes: &[u8]) -> u64 {
    const POLY: u64 = 0x42F0_E1EB_A9EA_3693;
    static TABLE: OnceLock<[u64; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut table = [0u64; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut crc = (i as u64) << 56;
            for _ in 0..8 {
                crc = if crc & (1 << 63) != 0 {
                    (crc << 1) ^ POLY
                } else {
                    crc << 1
                };
            }
            *slot = crc;
        }
        table
    });
    let mut crc = 0u64;
    for &b in bytes {
        let idx = ((crc >> 56) as u8 ^ b) as usize;
        crc = (crc << 8) ^ table[idx];
    }
    crc
}

/// Serializes the model and scaler to bytes in the checkpoint layout.
pub fn to_bytes(model: &SoftsModel<f32>, scaler: &ChannelScaler) -> Result<Vec<u8>> {
    let c = model.config.channels;
    if scaler.mean.len() != c || scaler.std.len() != c {
        return Err(SoftsError::config(format!(
            "scaler covers {} channels, model expects {c}",
            scaler.mean.len()
        )));
    }
    let named = model.named_params();
    let mut tensors: Vec<TensorEntry> = named
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    tensors.push(TensorEntry {
        name: "scaler.mean".to_string(),
        shape: vec![c],
    });
    tensors.push(TensorEntry {
        name: "scaler.std".to_string(),
        shape: vec![c],
    });
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        config: model.config.clone(),
        tensors,
    };

    let mut out = serde_json::to_vec(&manifest)
        .map_err(|e| SoftsError::config(format!("manifest serialization: {e}")))?;
    out.push(b'\n');
    let payload_start = out.len();
    for (_, tensor) in &named {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in scaler.mean.iter().chain(scaler.std.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc64(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Writes a checkpoint atomically: temp file in the same directory, then
/// rename.
pub fn save(path: &Path, model: &SoftsModel<f32>, scaler: &ChannelScaler) -> Result<()> {
    let bytes = to_bytes(model, scaler)?;
    write_atomic(path, &bytes)
}

/// Atomic file write used for every `--out` destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = match (path.parent(), path.file_name()) {
        (Some(dir), Some(name)) => {
            let mut tmp_name = name.to_os_string();
            tmp_name.push(".tmp");
            dir.join(tmp_name)
        }
        _ => {
            return Err(SoftsError::io(
                path,
                std::io::Error::other("path has no file name"),
            ))
        }
    };
    let mut file = std::fs::File::create(&tmp).map_err(|e| SoftsError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| SoftsError::io(&tmp, e))?;
    file.sync_all().map_err(|e| SoftsError::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| SoftsError::io(path, e))
}

fn corrupt(path: &Path, detail: impl Into<String>) -> SoftsError {
    SoftsError::Checkpoint {
        path: path.into(),
        detail: detail.into(),
    }
}

/// Reads and verifies a checkpoint, rebuilding the model and scaler.
pub fn load(path: &Path) -> Result<(SoftsModel<f32>, ChannelScaler)> {
    let bytes = std::fs::read(path).map_err(|e| SoftsError::io(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt(path, "no manifest line"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| corrupt(path, format!("bad manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(corrupt(
            path,
            format!(
                "format {:?}, this build reads {CHECKPOINT_FORMAT:?}",
                manifest.format
            ),
        ));
    }

    let payload_len: usize = manifest
        .tensors
        .iter()
        .map(|t| 4 * t.shape.iter().product::<usize>())
        .sum();
    let expected_total = newline + 1 + payload_len + 8;
    if bytes.len() != expected_total {
        return Err(corrupt(
            path,
            format!(
                "file is {} bytes, manifest implies {expected_total}",
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[newline + 1..newline + 1 + payload_len];
    let stored_crc = u64::from_le_bytes(
        bytes[newline + 1 + payload_len..]
            .try_into()
            .expect("length checked above"),
    );
    let actual_crc = crc64(payload);
    if stored_crc != actual_crc {
        return Err(corrupt(
            path,
            format!("payload CRC {actual_crc:#018x} does not match stored {stored_crc:#018x}"),
        ));
    }

    let mut model = SoftsModel::<f32>::init(&manifest.config)?;
    let expected_names: Vec<(String, Vec<usize>)> = model
        .named_params()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    let c = manifest.config.channels;
    let mut all_expected = expected_names;
    all_expected.push(("scaler.mean".to_string(), vec![c]));
    all_expected.push(("scaler.std".to_string(), vec![c]));
    if manifest.tensors.len() != all_expected.len() {
        return Err(corrupt(
            path,
            format!(
                "manifest lists {} tensors, config implies {}",
                manifest.tensors.len(),
                all_expected.len()
            ),
        ));
    }
    for (entry, (name, shape)) in manifest.tensors.iter().zip(&all_expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(corrupt(
                path,
                format!(
                    "tensor {:?} with shape {:?} where {name:?} with shape {shape:?} was expected",
                    entry.name, entry.shape
                ),
            ));
        }
    }

    let mut floats = payload
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes(ch.try_into().expect("chunk of 4")));
    for param in model.params_mut() {
        for slot in param.data_mut() {
            *slot = floats.next().expect("payload length checked");
        }
    }
    let mean: Vec<f32> = (&mut floats).take(c).collect();
    let std: Vec<f32> = (&mut floats).take(c).collect();
    Ok((model, ChannelScaler { mean, std }))
}
