//! Model checkpoints: a versioned JSON document whose parameter arrays are
//! base64-encoded little-endian float64, so files are byte-stable and
//! self-describing.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tinylm::model::{LmConfig, LmParams};
use crate::tinylm::vocab::{BOS, EOT, PAD, SEP, VOCAB_SIZE};

pub const LM_FORMAT: &str = "tinylm-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabHeader {
    kind: String,
    size: usize,
    bos: u16,
    eot: u16,
    sep: u16,
    pad: u16,
}

impl VocabHeader {
    fn current() -> Self {
        Self {
            kind: "byte".into(),
            size: VOCAB_SIZE,
            bos: BOS,
            eot: EOT,
            sep: SEP,
            pad: PAD,
        }
    }

    fn check(&self) -> Result<(), CheckpointError> {
        let expected = Self::current();
        if self.kind != expected.kind || self.size != expected.size {
            return Err(CheckpointError::Format(format!(
                "unsupported vocab {}/{} (expected {}/{})",
                self.kind, self.size, expected.kind, expected.size
            )));
        }
        Ok(())
    }
}

/// Base64 of little-endian float64 values; shared with the PM checkpoint.
pub(crate) fn encode_f64s<T: Scalar>(data: &[T]) -> String {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    B64.encode(bytes)
}

pub(crate) fn decode_f64s<T: Scalar>(
    b64: &str,
    expect_len: usize,
    name: &str,
) -> Result<Vec<T>, CheckpointError> {
    let bytes = B64
        .decode(b64)
        .map_err(|e| CheckpointError::Format(format!("array `{name}`: {e}")))?;
    if bytes.len() != expect_len * 8 {
        return Err(CheckpointError::Format(format!(
            "array `{name}`: expected {expect_len} float64 values, found {} bytes",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(expect_len);
    for chunk in bytes.chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(CheckpointError::Format(format!(
                "array `{name}` contains a non-finite value"
            )));
        }
        out.push(T::from_f64_lossy(v));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayBlob {
    rows: usize,
    cols: usize,
    b64: String,
}

impl ArrayBlob {
    fn from_slice<T: Scalar>(rows: usize, cols: usize, data: &[T]) -> Self {
        Self {
            rows,
            cols,
            b64: encode_f64s(data),
        }
    }

    fn decode<T: Scalar>(&self, name: &str) -> Result<Vec<T>, CheckpointError> {
        decode_f64s(&self.b64, self.rows * self.cols, name)
    }

    fn expect_shape(&self, name: &str, rows: usize, cols: usize) -> Result<(), CheckpointError> {
        if self.rows != rows || self.cols != cols {
            return Err(CheckpointError::Format(format!(
                "array `{name}`: shape {}x{}, expected {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LmCheckpoint {
    format: String,
    version: u32,
    config: LmConfig,
    vocab: VocabHeader,
    embedding: ArrayBlob,
    w_in: ArrayBlob,
    b_in: ArrayBlob,
    w_out: ArrayBlob,
    b_out: ArrayBlob,
}

pub(crate) fn params_to_json<T: Scalar>(params: &LmParams<T>) -> serde_json::Value {
    let c = &params.config;
    let ckpt = LmCheckpoint {
        format: LM_FORMAT.into(),
        version: FORMAT_VERSION,
        config: *c,
        vocab: VocabHeader::current(),
        embedding: ArrayBlob::from_slice(VOCAB_SIZE, c.embed_dim, params.embedding.as_slice()),
        w_in: ArrayBlob::from_slice(c.input_dim(), c.hidden_dim, params.w_in.as_slice()),
        b_in: ArrayBlob::from_slice(1, c.hidden_dim, &params.b_in),
        w_out: ArrayBlob::from_slice(c.hidden_dim, VOCAB_SIZE, params.w_out.as_slice()),
        b_out: ArrayBlob::from_slice(1, VOCAB_SIZE, &params.b_out),
    };
    serde_json::to_value(ckpt).expect("checkpoint serializes")
}

pub(crate) fn params_from_json<T: Scalar>(
    value: serde_json::Value,
) -> Result<LmParams<T>, CheckpointError> {
    let ckpt: LmCheckpoint = serde_json::from_value(value)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    if ckpt.format != LM_FORMAT {
        return Err(CheckpointError::Format(format!(
            "format tag `{}`, expected `{LM_FORMAT}`",
            ckpt.format
        )));
    }
    if ckpt.version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {}",
            ckpt.version
        )));
    }
    ckpt.vocab.check()?;
    let c = ckpt.config;
    c.validate()
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    ckpt.embedding.expect_shape("embedding", VOCAB_SIZE, c.embed_dim)?;
    ckpt.w_in.expect_shape("w_in", c.input_dim(), c.hidden_dim)?;
    ckpt.b_in.expect_shape("b_in", 1, c.hidden_dim)?;
    ckpt.w_out.expect_shape("w_out", c.hidden_dim, VOCAB_SIZE)?;
    ckpt.b_out.expect_shape("b_out", 1, VOCAB_SIZE)?;
    Ok(LmParams {
        config: c,
        embedding: Matrix::from_vec(VOCAB_SIZE, c.embed_dim, ckpt.embedding.decode("embedding")?),
        w_in: Matrix::from_vec(c.input_dim(), c.hidden_dim, ckpt.w_in.decode("w_in")?),
        b_in: ckpt.b_in.decode("b_in")?,
        w_out: Matrix::from_vec(c.hidden_dim, VOCAB_SIZE, ckpt.w_out.decode("w_out")?),
        b_out: ckpt.b_out.decode("b_out")?,
    })
}

/// Writes an LM checkpoint. Byte-deterministic for fixed parameters.
pub fn save_lm<T: Scalar>(params: &LmParams<T>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let json = serde_json::to_string(&params_to_json(params))
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

/// Reads an LM checkpoint, validating the format tag, version, and shapes.
pub fn load_lm<T: Scalar>(path: impl AsRef<Path>) -> Result<LmParams<T>, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    params_from_json(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::model::init;

    #[test]
    fn round_trip_preserves_parameters_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.json");
        let p: LmParams<f64> = init(LmConfig {
            context_window: 3,
            embed_dim: 2,
            hidden_dim: 4,
            seed: 17,
        })
        .unwrap();
        save_lm(&p, &path).unwrap();
        let q: LmParams<f64> = load_lm(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p: LmParams<f64> = init(LmConfig::default()).unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save_lm(&p, &p1).unwrap();
        save_lm(&p, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_wrong_format_tag_and_bad_shapes() {
        let p: LmParams<f64> = init(LmConfig {
            context_window: 3,
            embed_dim: 2,
            hidden_dim: 4,
            seed: 1,
        })
        .unwrap();
        let mut v = params_to_json(&p);
        v["format"] = "something-else".into();
        assert!(params_from_json::<f64>(v).is_err());

        let mut v = params_to_json(&p);
        v["w_in"]["rows"] = 999.into();
        assert!(params_from_json::<f64>(v).is_err());
    }
}
