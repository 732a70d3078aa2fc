//! Binary checkpoint format: a JSON header describing the config and tensor
//! layout, followed by raw little-endian f32 payloads.
//!
//! Layout: magic `TLTC`, version byte, u32-LE header length, header JSON,
//! then each tensor's row-major data in header order. Weights compute in f64
//! but are stored as f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{parameter_shapes, ModelConfig, ModelParams};
use crate::tensor::{Parameter, Tensor};
use crate::util::write_atomic;

const MAGIC: &[u8; 4] = b"TLTC";
const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

/// Serializes the model to `path`, atomically.
pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    config.validate()?;
    let header = Header {
        config: *config,
        tensors: params
            .list()
            .iter()
            .map(|p| TensorMeta {
                name: p.name.to_string(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let payload_len: usize = params.list().iter().map(|p| p.value.len() * 4).sum();
    let mut bytes = Vec::with_capacity(4 + 1 + 4 + header_json.len() + payload_len);
    bytes.extend_from_slice(MAGIC);
    bytes.push(VERSION);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in params.list() {
        for &x in p.value.data() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

/// Reads a checkpoint back. The header must describe exactly the tensors the
/// config implies, in order; any shape disagreement, short payload, or
/// trailing garbage is a distinct error.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    if bytes.len() < 9 {
        return Err(Error::TruncatedCheckpoint);
    }
    if bytes[4] != VERSION {
        return Err(Error::CheckpointVersion(bytes[4]));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body = &bytes[9..];
    if body.len() < header_len {
        return Err(Error::TruncatedCheckpoint);
    }
    let header: Header = serde_json::from_slice(&body[..header_len])?;
    header.config.validate()?;

    let expected = parameter_shapes(&header.config);
    if header.tensors.len() != expected.len() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint lists {} tensors, model has {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut payload = &body[header_len..];
    let mut list = Vec::with_capacity(expected.len());
    for (meta, (name, shape)) in header.tensors.iter().zip(&expected) {
        if meta.name != *name {
            return Err(Error::InvalidArgument(format!(
                "checkpoint tensor {:?} where {name:?} was expected",
                meta.name
            )));
        }
        if meta.shape != *shape {
            return Err(Error::CheckpointShape {
                name: meta.name.clone(),
                header: meta.shape.clone(),
                expected: shape.clone(),
            });
        }
        let n_bytes = shape.iter().product::<usize>() * 4;
        if payload.len() < n_bytes {
            return Err(Error::TruncatedCheckpoint);
        }
        let data = payload[..n_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        payload = &payload[n_bytes..];
        list.push(Parameter::new(*name, Tensor::from_vec(shape.clone(), data)?));
    }
    if !payload.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after checkpoint payload",
            payload.len()
        )));
    }
    Ok((header.config, ModelParams::from_list(list)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params};
    use crate::vocab::EncodedSeq;
    use tempfile::tempdir;

    fn mini_config() -> ModelConfig {
        ModelConfig {
            max_src_len: 6,
            max_tgt_len: 3,
            emb_dim: 4,
            enc_hidden: 4,
            proj_dim: 4,
            dec_hidden: 4,
            src_vocab: 5,
            tgt_vocab: 5,
        }
    }

    #[test]
    fn round_trip_preserves_config_and_probabilities() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.tltc");
        let cfg = mini_config();
        let params = init_params(&cfg, 21).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);

        for (a, b) in params.list().iter().zip(params2.list()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            for (&x, &y) in a.value.data().iter().zip(b.value.data()) {
                // f32 storage: relative error bounded by one f32 ulp
                assert!((x - y).abs() <= x.abs() * 1e-7 + 1e-12, "{x} vs {y}");
            }
        }

        let batch = [EncodedSeq {
            ids: vec![2, 3, 4],
            length: 3,
        }];
        let p1 = forward(&params, &cfg, &batch).unwrap();
        let p2 = forward(&params2, &cfg, &batch).unwrap();
        for (&a, &b) in p1.data().iter().zip(p2.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn wrong_magic_is_not_a_checkpoint() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"PKZZ rest of some other file format").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.to_string(), "not a checkpoint");
    }

    #[test]
    fn unknown_version_is_rejected_by_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v9.tltc");
        let mut bytes = b"TLTC".to_vec();
        bytes.push(9);
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.to_string(), "unsupported checkpoint version 9");
    }

    #[test]
    fn short_payload_is_truncated() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.tltc");
        let cfg = mini_config();
        let params = init_params(&cfg, 3).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.to_string(), "truncated checkpoint");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.tltc");
        let cfg = mini_config();
        let params = init_params(&cfg, 3).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0, 0, 0]);
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("trailing bytes"));
    }

    #[test]
    fn header_shape_disagreement_names_the_tensor() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.tltc");
        let cfg = mini_config();
        let params = init_params(&cfg, 3).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();

        // rewrite the header with a lie about the embedding shape
        let bytes = std::fs::read(&path).unwrap();
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let mut header: Header = serde_json::from_slice(&bytes[9..9 + header_len]).unwrap();
        header.tensors[0].shape = vec![5, 7];
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..5].to_vec();
        out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
        out.extend_from_slice(&new_header);
        out.extend_from_slice(&bytes[9 + header_len..]);
        std::fs::write(&path, out).unwrap();

        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(
            err.to_string(),
            "checkpoint shape mismatch for embedding: header [5, 7], expected [5, 4]"
        );
    }

    #[test]
    fn corrupt_header_json_is_a_json_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.tltc");
        let cfg = mini_config();
        let params = init_params(&cfg, 3).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[10] = b'{'; // stomp inside the JSON header
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Json(_)));
    }
}
