//! Checkpoint container: a one-line JSON header followed by flat
//! little-endian f32 payloads, one per named array, in header order.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ParamStore;

pub const CHECKPOINT_FORMAT: &str = "hoisynth-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("payload truncated for array '{0}'")]
    Truncated(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    step: u64,
    config: serde_json::Value,
    arrays: Vec<ArrayMeta>,
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    rows: usize,
    cols: usize,
}

/// In-memory checkpoint contents.
pub struct Checkpoint {
    pub seed: u64,
    pub step: u64,
    pub config: serde_json::Value,
    pub arrays: BTreeMap<String, Array2<f64>>,
}

impl Checkpoint {
    /// Splits model parameters from optimizer-state arrays.
    pub fn into_store(self) -> (ParamStore, BTreeMap<String, Array2<f64>>) {
        let mut store = ParamStore::new();
        let mut rest = BTreeMap::new();
        for (name, a) in self.arrays {
            if name.starts_with("adam.") || name.starts_with("norm.") {
                rest.insert(name, a);
            } else {
                store.insert(&name, a);
            }
        }
        (store, rest)
    }
}

pub fn save_checkpoint(
    path: &Path,
    seed: u64,
    step: u64,
    config: &serde_json::Value,
    arrays: &[(String, &Array2<f64>)],
) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        seed,
        step,
        config: config.clone(),
        arrays: arrays
            .iter()
            .map(|(name, a)| ArrayMeta { name: name.clone(), rows: a.nrows(), cols: a.ncols() })
            .collect(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let mut line = serde_json::to_vec(&header).expect("header serializes");
    line.push(b'\n');
    w.write_all(&line).map_err(io)?;
    for (_, a) in arrays {
        for &v in a.iter() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut r = BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte).map_err(io)?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 16 << 20 {
            return Err(CheckpointError::Header("unterminated header".into()));
        }
    }
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Header(format!("unknown format '{}'", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Header(format!("unsupported version {}", header.version)));
    }
    let mut arrays = BTreeMap::new();
    for meta in &header.arrays {
        let count = meta.rows * meta.cols;
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)
            .map_err(|_| CheckpointError::Truncated(meta.name.clone()))?;
        let data: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let a = Array2::from_shape_vec((meta.rows, meta.cols), data)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        arrays.insert(meta.name.clone(), a);
    }
    Ok(Checkpoint { seed: header.seed, step: header.step, config: header.config, arrays })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let a = array![[1.0f64, 2.5], [-3.25, 0.125]];
        let b = array![[0.1f64 as f32 as f64]];
        let cfg = serde_json::json!({"latent": 8});
        save_checkpoint(&path, 42, 7, &cfg, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.seed, 42);
        assert_eq!(ck.step, 7);
        assert_eq!(ck.config["latent"], 8);
        assert_eq!(ck.arrays["a"], a);
        assert_eq!(ck.arrays["b"], b);
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let a = array![[1.0f64, 2.0]];
        save_checkpoint(&path, 0, 0, &serde_json::json!({}), &[("a".into(), &a)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Truncated(_))));
    }
}
