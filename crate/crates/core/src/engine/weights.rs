//! Weight file:
//!
//! ```text
//! "QGTW"  u16 version  u32 num_layers
//! per layer: u32 in_dim  u32 out_dim  in_dim*out_dim f32 (row-major)
//!            f64 alpha_min  f64 alpha_max  u8 bits
//! ```
//!
//! All little-endian.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelKind};
use crate::bitpack::Reader;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::QuantParams;

pub const WEIGHT_MAGIC: [u8; 4] = *b"QGTW";
pub const WEIGHT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub weight: Matrix<f64>,
    pub quant: QuantParams,
}

/// Weights are narrowed to f32.
pub fn encode_weights(entries: &[WeightEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.weight.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(e.weight.cols() as u32).to_le_bytes());
        for &v in e.weight.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&e.quant.alpha_min().to_le_bytes());
        out.extend_from_slice(&e.quant.alpha_max().to_le_bytes());
        out.push(e.quant.bits());
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<WeightEntry>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(Error::Format("bad weight file magic".into()));
    }
    let version = r.u16()?;
    if version != WEIGHT_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight file version {version}"
        )));
    }
    let layers = r.u32()? as usize;
    let mut entries = Vec::with_capacity(layers.min(1024));
    for l in 0..layers {
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(4) <= r.remaining())
            .ok_or_else(|| {
                Error::Format(format!("layer {l}: {rows}x{cols} weights exceed the file"))
            })?;
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let (lo, hi, bits) = (r.f64()?, r.f64()?, r.u8()?);
        let quant =
            QuantParams::new(lo, hi, bits).map_err(|e| Error::Format(format!("layer {l}: {e}")))?;
        entries.push(WeightEntry {
            weight: Matrix::from_vec(rows, cols, data),
            quant,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes in weight file",
            r.remaining()
        )));
    }
    Ok(entries)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Vec<WeightEntry>> {
    decode_weights(&fs::read(path)?)
}

pub fn save_weights(path: impl AsRef<Path>, entries: &[WeightEntry]) -> Result<()> {
    fs::write(path, encode_weights(entries))?;
    Ok(())
}

impl ModelConfig {
    /// Model over externally trained weights, keeping each layer's stored
    /// quantization range. All layers must share one weight bit width.
    pub fn from_weight_entries(
        kind: ModelKind,
        entries: Vec<WeightEntry>,
        x_bits: u8,
    ) -> Result<Self> {
        let Some(w_bits) = entries.first().map(|e| e.quant.bits()) else {
            return Err(Error::InvalidParams("weight file holds no layers".into()));
        };
        if entries.iter().any(|e| e.quant.bits() != w_bits) {
            return Err(Error::InvalidParams(
                "weight layers use different bit widths".into(),
            ));
        }
        let quants: Vec<_> = entries.iter().map(|e| e.quant).collect();
        let mut model = Self::from_weights(
            kind,
            entries.into_iter().map(|e| e.weight).collect(),
            x_bits,
            w_bits,
        )?;
        for (layer, q) in model.layers.iter_mut().zip(quants) {
            layer.weight_quant = q;
        }
        Ok(model)
    }

    pub fn weight_entries(&self) -> Vec<WeightEntry> {
        self.layers
            .iter()
            .map(|l| WeightEntry {
                weight: l.weight.clone(),
                quant: l.weight_quant,
            })
            .collect()
    }
}
