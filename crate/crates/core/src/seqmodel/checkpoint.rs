//! Binary model checkpoint, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "CAPPMDL1"
//! d_model      u64
//! n_heads      u64
//! n_layers     u64
//! d_ff         u64
//! context_len  u64
//! vocab_size   u64
//! dropout      f64
//! n_params     u64
//! params       n_params x f64, in ParamLayout order
//! ```

use std::path::Path;

use super::{Model, ModelConfig};
use crate::corpus::dataset_write_atomic;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CAPPMDL1";

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let c = &model.cfg;
    let mut buf = Vec::with_capacity(8 + 8 * 8 + model.params.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for x in [
        c.d_model,
        c.n_heads,
        c.n_layers,
        c.d_ff,
        c.context_len,
        c.vocab_size,
    ] {
        buf.extend_from_slice(&(x as u64).to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout.to_le_bytes());
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    dataset_write_atomic(path, &buf)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m.to_string());
    if bytes.len() < 80 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes") };
    let u = |i: usize| u64::from_le_bytes(word(i)) as usize;
    let cfg = ModelConfig {
        d_model: u(0),
        n_heads: u(1),
        n_layers: u(2),
        d_ff: u(3),
        context_len: u(4),
        vocab_size: u(5),
        dropout: f64::from_le_bytes(word(6)),
    };
    let n = u(7);
    let body = &bytes[72..];
    if body.len() != n * 8 {
        return Err(bad("parameter block length mismatch"));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Model::from_parts(cfg, params).map_err(|e| bad(&e.to_string()))
}
