//! Checkpoint container: a JSON header (model id, config, seed, array names
//! and shapes) followed by the concatenated little-endian f32 payload.
//!
//! Framing: 8-byte magic `TEEGCKP1`, u32-LE header length, header JSON,
//! payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TEEGCKP1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub arrays: Vec<ArrayInfo>,
}

/// Writes named tensors with a header. Array order in the payload matches
/// `arrays`.
pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, arrays: &[&Tensor]) -> Result<()> {
    if header.arrays.len() != arrays.len() {
        return Err(Error::shape(format!(
            "checkpoint header lists {} arrays, got {}",
            header.arrays.len(),
            arrays.len()
        )));
    }
    for (info, t) in header.arrays.iter().zip(arrays) {
        if info.shape.iter().product::<usize>() != t.numel() {
            return Err(Error::shape(format!(
                "array \"{}\" shape {:?} != {} values",
                info.name,
                info.shape,
                t.numel()
            )));
        }
    }
    let header_json =
        serde_json::to_vec(header).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    let mut payload = Vec::new();
    for t in arrays {
        for v in &t.data {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    file.write_all(&payload).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint back; tensors come back in header order.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Tensor>)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::parse(path, "bad checkpoint magic"));
    }
    let mut len = [0u8; 4];
    file.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let mut header_json = vec![0u8; u32::from_le_bytes(len) as usize];
    file.read_exact(&mut header_json)
        .map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_json).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected: usize = header
        .arrays
        .iter()
        .map(|a| a.shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected * 4 {
        return Err(Error::shape(format!(
            "checkpoint payload {} bytes, expected {}",
            payload.len(),
            expected * 4
        )));
    }
    let mut tensors = Vec::with_capacity(header.arrays.len());
    let mut offset = 0usize;
    for info in &header.arrays {
        let n: usize = info.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for chunk in payload[offset..offset + n * 4].chunks_exact(4) {
            data.push(f64::from(f32::from_le_bytes([
                chunk[0], chunk[1], chunk[2], chunk[3],
            ])));
        }
        offset += n * 4;
        tensors.push(Tensor::from_vec(&info.shape, data)?);
    }
    Ok((header, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 0.125, 3.75]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.1_f32 as f64, 0.2_f32 as f64, 0.3_f32 as f64])
            .unwrap();
        let header = CheckpointHeader {
            model: "test".into(),
            config: serde_json::json!({"d": 4}),
            seed: 9,
            arrays: vec![
                ArrayInfo {
                    name: "a".into(),
                    shape: vec![2, 2],
                },
                ArrayInfo {
                    name: "b".into(),
                    shape: vec![3],
                },
            ],
        };
        save_checkpoint(&path, &header, &[&a, &b]).unwrap();
        let (h2, tensors) = load_checkpoint(&path).unwrap();
        assert_eq!(h2.model, "test");
        assert_eq!(h2.seed, 9);
        assert_eq!(tensors[0], a);
        assert_eq!(tensors[1], b);
    }

    #[test]
    fn corrupt_payload_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = Tensor::zeros(&[4]);
        let header = CheckpointHeader {
            model: "test".into(),
            config: serde_json::Value::Null,
            seed: 0,
            arrays: vec![ArrayInfo {
                name: "a".into(),
                shape: vec![4],
            }],
        };
        save_checkpoint(&path, &header, &[&a]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
