//! Checkpoint format: a JSON manifest describing named tensors plus one flat
//! little-endian `f64` blob.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(blob)
}

/// Writes `entries` as `<path>` (manifest JSON) plus a sibling `.bin` blob.
pub fn write_checkpoint(
    path: &Path,
    entries: &[(String, Tensor<f64>)],
    model_config: Option<serde_json::Value>,
    seed: Option<u64>,
) -> Result<()> {
    let blob_name = path
        .file_stem()
        .map(|s| format!("{}.bin", s.to_string_lossy()))
        .unwrap_or_else(|| "checkpoint.bin".to_string());
    let mut records = Vec::with_capacity(entries.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, t) in entries {
        let offset = blob.len() as u64;
        for v in t.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        records.push(TensorRecord {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f64".to_string(),
            byte_offset: offset,
            byte_length: (t.len() * 8) as u64,
        });
    }
    let manifest = CheckpointManifest {
        format_version: 1,
        blob: blob_name.clone(),
        tensors: records,
        model_config,
        seed,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(blob_path(path, &blob_name))?;
    f.write_all(&blob)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, json)?;
    Ok(())
}

/// Reads a manifest and its blob back into named tensors, in manifest order.
pub fn read_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor<f64>)>, CheckpointManifest)> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format_version != 1 {
        return Err(Error::Incompatible(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    let mut blob = Vec::new();
    fs::File::open(blob_path(path, &manifest.blob))?.read_to_end(&mut blob)?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for rec in &manifest.tensors {
        if rec.dtype != "f64" {
            return Err(Error::Incompatible(format!(
                "tensor {} has dtype {}, expected f64",
                rec.name, rec.dtype
            )));
        }
        let n: usize = rec.shape.iter().product();
        if rec.byte_length != (n * 8) as u64 {
            return Err(Error::Validation(format!(
                "tensor {}: byte length {} does not match shape {:?}",
                rec.name, rec.byte_length, rec.shape
            )));
        }
        let start = rec.byte_offset as usize;
        let end = start + rec.byte_length as usize;
        if end > blob.len() {
            return Err(Error::Validation(format!(
                "tensor {}: blob range {}..{} out of bounds ({} bytes)",
                rec.name,
                start,
                end,
                blob.len()
            )));
        }
        let mut data = Vec::with_capacity(n);
        for chunk in blob[start..end].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().expect("chunk of 8")));
        }
        out.push((rec.name.clone(), Tensor::from_vec(&rec.shape, data)?));
    }
    Ok((out, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let entries = vec![
            (
                "a.weight".to_string(),
                Tensor::from_vec(&[2, 2], vec![1.5, -2.25, 0.0, 1e-300]).unwrap(),
            ),
            (
                "b.bias".to_string(),
                Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap(),
            ),
        ];
        write_checkpoint(&path, &entries, None, Some(42)).unwrap();
        let (back, manifest) = read_checkpoint(&path).unwrap();
        assert_eq!(manifest.seed, Some(42));
        assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert_eq!(t0.values(), t1.values());
        }
    }
}
