//! Codebook files.
//!
//! Binary layout, all little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `DVNCCB01` |
//! | 8 | `codebook_size` (u64) |
//! | 8 | `heads` (u64) |
//! | 8 | `dim` (u64) |
//! | 8 | `beta` (f64) |
//! | 8 | `codebook_loss_weight` (f64) |
//! | 8·L·d | entries, row-major f64 |
//!
//! The JSON form carries the same fields with `entries` as a list of rows.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, QuantizerConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"DVNCCB01";

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

pub fn write_codebook_binary(w: &mut impl Write, config: &QuantizerConfig, codebook: &Codebook) -> Result<()> {
    check(config, codebook)?;
    w.write_all(MAGIC)?;
    for v in [config.codebook_size, config.heads, config.dim] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in [config.beta, config.codebook_loss_weight] {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    for v in codebook.entries().data() {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_codebook_binary(r: &mut impl Read) -> Result<(QuantizerConfig, Codebook)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a codebook file (bad magic)".into()));
    }
    let size = read_u64(r)? as usize;
    let heads = read_u64(r)? as usize;
    let dim = read_u64(r)? as usize;
    let beta = read_f64(r)?;
    let weight = read_f64(r)?;
    let config = QuantizerConfig {
        codebook_size: size,
        heads,
        dim,
        beta,
        codebook_loss_weight: weight,
    };
    config.validate()?;
    let d = config.segment_dim();
    let data = (0..size * d).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    Ok((config, Codebook::from_entries(Tensor::matrix(size, d, data)?)?))
}

#[derive(Serialize, Deserialize)]
struct CodebookJson {
    codebook_size: usize,
    heads: usize,
    dim: usize,
    beta: f64,
    codebook_loss_weight: f64,
    entries: Vec<Vec<f64>>,
}

pub fn codebook_to_json(config: &QuantizerConfig, codebook: &Codebook) -> Result<String> {
    check(config, codebook)?;
    let doc = CodebookJson {
        codebook_size: config.codebook_size,
        heads: config.heads,
        dim: config.dim,
        beta: config.beta,
        codebook_loss_weight: config.codebook_loss_weight,
        entries: (0..codebook.size()).map(|j| codebook.row(j).to_vec()).collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn codebook_from_json(text: &str) -> Result<(QuantizerConfig, Codebook)> {
    let doc: CodebookJson = serde_json::from_str(text)?;
    let config = QuantizerConfig {
        codebook_size: doc.codebook_size,
        heads: doc.heads,
        dim: doc.dim,
        beta: doc.beta,
        codebook_loss_weight: doc.codebook_loss_weight,
    };
    config.validate()?;
    let codebook = Codebook::from_rows(&doc.entries)?;
    check(&config, &codebook)?;
    Ok((config, codebook))
}

fn check(config: &QuantizerConfig, codebook: &Codebook) -> Result<()> {
    if codebook.size() != config.codebook_size || codebook.dim() != config.segment_dim() {
        return Err(Error::shape(
            "codebook",
            format!(
                "{:?} does not match L={} and d={}",
                codebook.entries().shape(),
                config.codebook_size,
                config.segment_dim()
            ),
        ));
    }
    Ok(())
}
