//! Versioned predictor file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "DQKPRED\0"
//! version  u32       FORMAT_VERSION
//! hdr_len  u64       length of the JSON header in bytes
//! header   hdr_len   UTF-8 JSON manifest (shapes, dictionary, provenance)
//! blocks             A, B, C as f64, column-major, in that order
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LinearPredictor, PredictorMeta};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DQKPRED\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BlockShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    state_dim: usize,
    lifted_dim: usize,
    input_dim: usize,
    blocks: Vec<BlockShape>,
    dictionary: Dictionary,
    meta: PredictorMeta,
}

pub fn to_bytes(p: &LinearPredictor) -> Result<Vec<u8>> {
    let blocks = [("A", &p.a), ("B", &p.b), ("C", &p.c)];
    let header = Header {
        format_version: FORMAT_VERSION,
        state_dim: p.state_dim(),
        lifted_dim: p.lifted_dim(),
        input_dim: p.input_dim(),
        blocks: blocks
            .iter()
            .map(|(name, m)| BlockShape {
                name: name.to_string(),
                rows: m.nrows(),
                cols: m.ncols(),
            })
            .collect(),
        dictionary: p.dictionary.clone(),
        meta: p.meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * (p.a.len() + p.b.len() + p.c.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in blocks {
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<LinearPredictor> {
    let bad = |r: &str| Error::format(origin, r.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a predictor file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hdr_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes
        .get(20..20usize.saturating_add(hdr_len))
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
    let mut offset = 20 + hdr_len;
    let mut mats = Vec::new();
    for shape in &header.blocks {
        let count = shape.rows * shape.cols;
        let raw = bytes
            .get(offset..offset + 8 * count)
            .ok_or_else(|| bad(&format!("truncated block {}", shape.name)))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        mats.push(DMatrix::from_vec(shape.rows, shape.cols, data));
        offset += 8 * count;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after matrix blocks"));
    }
    let names: Vec<&str> = header.blocks.iter().map(|b| b.name.as_str()).collect();
    if names != ["A", "B", "C"] {
        return Err(bad("expected blocks A, B, C"));
    }
    let c = mats.pop().unwrap();
    let b = mats.pop().unwrap();
    let a = mats.pop().unwrap();
    let mut p = LinearPredictor::new(super::LiftedModel { a, b }, c, header.dictionary)
        .map_err(|e| bad(&e.to_string()))?;
    if p.input_dim() != header.input_dim || p.state_dim() != header.state_dim {
        return Err(bad("header dimensions disagree with blocks"));
    }
    p.meta = header.meta;
    Ok(p)
}

pub fn save(p: &LinearPredictor, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(p)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<LinearPredictor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
