//! Model checkpoint formats.
//!
//! Binary (`.bin`, little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"RLGNCKPT"
//! 8       4     format version (u32) = 1
//! 12      4     vocab_size V (u32)
//! 16      4     embed_dim d (u32)
//! 20      4     hidden_dim h (u32)
//! 24      8·P   parameters (f64), in order embedding (V×d), hidden_weights (d×h),
//!               hidden_bias (h), output_weights (h×V), output_bias (V); matrices row-major
//! ```
//!
//! JSON (`.json`): the same header fields and one array per block, each value
//! written as a shortest round-trip decimal string. Both forms round-trip bit
//! for bit.

use std::fs;
use std::path::Path;

use realign_core::{ModelParams, ParamLayout};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"RLGNCKPT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let lay = params.layout();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * lay.dim());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, lay.vocab_size as u32, lay.embed_dim as u32, lay.hidden_dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> std::result::Result<ModelParams, String> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err("not a realign checkpoint".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(format!("unsupported checkpoint version {}", word(0)));
    }
    let layout = ParamLayout::new(word(1) as usize, word(2) as usize, word(3) as usize).map_err(|e| e.to_string())?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * layout.dim() {
        return Err(format!("expected {} parameter bytes, found {}", 8 * layout.dim(), body.len()));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::from_flat(layout, values).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonCheckpoint {
    pub format: String,
    pub version: u32,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub embedding: Vec<String>,
    pub hidden_weights: Vec<String>,
    pub hidden_bias: Vec<String>,
    pub output_weights: Vec<String>,
    pub output_bias: Vec<String>,
}

fn decimal(values: &[f64]) -> Vec<String> {
    // `Display` for f64 prints the shortest string that parses back to the same bits.
    values.iter().map(|v| v.to_string()).collect()
}

pub fn to_json(params: &ModelParams) -> JsonCheckpoint {
    let lay = params.layout();
    JsonCheckpoint {
        format: "realign-checkpoint".into(),
        version: VERSION,
        vocab_size: lay.vocab_size,
        embed_dim: lay.embed_dim,
        hidden_dim: lay.hidden_dim,
        embedding: decimal(params.embedding()),
        hidden_weights: decimal(params.hidden_weights()),
        hidden_bias: decimal(params.hidden_bias()),
        output_weights: decimal(params.output_weights()),
        output_bias: decimal(params.output_bias()),
    }
}

pub fn from_json(ck: &JsonCheckpoint) -> std::result::Result<ModelParams, String> {
    if ck.version != VERSION {
        return Err(format!("unsupported checkpoint version {}", ck.version));
    }
    let layout = ParamLayout::new(ck.vocab_size, ck.embed_dim, ck.hidden_dim).map_err(|e| e.to_string())?;
    let mut values = Vec::with_capacity(layout.dim());
    for block in [&ck.embedding, &ck.hidden_weights, &ck.hidden_bias, &ck.output_weights, &ck.output_bias] {
        for s in block {
            values.push(s.parse::<f64>().map_err(|e| format!("bad value `{s}`: {e}"))?);
        }
    }
    let params = ModelParams::from_flat(layout, values).map_err(|e| e.to_string())?;
    for (range, block) in [
        (layout.embedding(), &ck.embedding),
        (layout.hidden_weights(), &ck.hidden_weights),
        (layout.hidden_bias(), &ck.hidden_bias),
        (layout.output_weights(), &ck.output_weights),
        (layout.output_bias(), &ck.output_bias),
    ] {
        if range.len() != block.len() {
            return Err("parameter block has the wrong length".into());
        }
    }
    Ok(params)
}

/// Writes binary or JSON depending on the extension (`.json` → JSON).
pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    if is_json(path) {
        crate::io::write_json(path, &to_json(params))
    } else {
        fs::write(path, to_bytes(params)).map_err(|e| CliError::io(path, e))
    }
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let parsed = if is_json(path) {
        from_json(&crate::io::read_json(path)?)
    } else {
        from_bytes(&fs::read(path).map_err(|e| CliError::io(path, e))?)
    };
    parsed.map_err(|message| CliError::Format {
        path: path.into(),
        message,
    })
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}
