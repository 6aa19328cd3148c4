//! Uniform q-bit quantization and bit-plane decomposition.
//!
//! A real value `a` maps to `floor((a - alpha_min) / scale)` with
//! `scale = (alpha_max - alpha_min) / 2^q`, clamped into `[0, 2^q - 1]`.
//! The quantized value is read back as `alpha_min + scale * q`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAX_BITS: u8 = 8;

/// Per-tensor quantization range and bit width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    alpha_min: f64,
    alpha_max: f64,
    bits: u8,
    scale: f64,
}

impl QuantParams {
    pub fn new(alpha_min: f64, alpha_max: f64, bits: u8) -> Result<Self> {
        if !alpha_min.is_finite() || !alpha_max.is_finite() {
            return Err(Error::InvalidParams(format!(
                "quantization bounds must be finite, got [{alpha_min}, {alpha_max}]"
            )));
        }
        if alpha_max <= alpha_min {
            return Err(Error::InvalidParams(format!(
                "alpha_max ({alpha_max}) must exceed alpha_min ({alpha_min})"
            )));
        }
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidParams(format!(
                "bit width {bits} outside [1, {MAX_BITS}]"
            )));
        }
        let scale = (alpha_max - alpha_min) / f64::from(1u32 << bits);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParams(format!("degenerate scale {scale}")));
        }
        Ok(Self {
            alpha_min,
            alpha_max,
            bits,
            scale,
        })
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Largest representable level, `2^q - 1`.
    pub fn max_level(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Same range at a different bit width.
    pub fn with_bits(&self, bits: u8) -> Result<Self> {
        Self::new(self.alpha_min, self.alpha_max, bits)
    }

    /// Quantizes one value. NaN and anything at or below `alpha_min` map to 0.
    pub fn quantize_scalar(&self, alpha: f64) -> u32 {
        if !(alpha > self.alpha_min) {
            return 0;
        }
        let level = ((alpha - self.alpha_min) / self.scale).floor();
        let max = self.max_level();
        if level >= f64::from(max) {
            max
        } else {
            level as u32
        }
    }

    /// Reconstructs the lower edge of a quantization bucket.
    pub fn dequantize_scalar(&self, level: u32) -> f64 {
        self.alpha_min + self.scale * f64::from(level)
    }
}

/// Free-function form of [`QuantParams::quantize_scalar`].
pub fn quantize_scalar(alpha: f64, params: &QuantParams) -> u32 {
    params.quantize_scalar(alpha)
}

/// A matrix of q-bit unsigned levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantMatrix {
    bits: u8,
    values: Matrix<u8>,
}

impl QuantMatrix {
    /// Validates that every value fits in `bits`.
    pub fn new(bits: u8, values: Matrix<u8>) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidParams(format!(
                "bit width {bits} outside [1, {MAX_BITS}]"
            )));
        }
        let max = (1u32 << bits) - 1;
        for r in 0..values.rows() {
            for (c, &v) in values.row(r).iter().enumerate() {
                if u32::from(v) > max {
                    return Err(Error::InvalidParams(format!(
                        "value {v} at ({r}, {c}) exceeds {bits}-bit range"
                    )));
                }
            }
        }
        Ok(Self { bits, values })
    }

    pub(crate) fn new_unchecked(bits: u8, values: Matrix<u8>) -> Self {
        Self { bits, values }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix<u8> {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.values[(r, c)]
    }

    pub fn into_values(self) -> Matrix<u8> {
        self.values
    }
}

/// Elementwise quantization. Fails on the first non-finite element.
pub fn quantize_matrix(m: &Matrix<f64>, params: &QuantParams) -> Result<QuantMatrix> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        for (c, &v) in m.row(r).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
            out[(r, c)] = params.quantize_scalar(v) as u8;
        }
    }
    Ok(QuantMatrix::new_unchecked(params.bits(), out))
}

/// Unpacked bit planes: `planes[i]` holds bit `i` (LSB first) of every element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlanes {
    planes: Vec<Matrix<u8>>,
}

impl BitPlanes {
    pub fn new(planes: Vec<Matrix<u8>>) -> Result<Self> {
        let Some(first) = planes.first() else {
            return Err(Error::Structure("bit plane list is empty".into()));
        };
        if planes.len() > usize::from(MAX_BITS) {
            return Err(Error::Structure(format!(
                "{} planes exceed {MAX_BITS}",
                planes.len()
            )));
        }
        let shape = first.shape();
        if let Some(bad) = planes.iter().position(|p| p.shape() != shape) {
            return Err(Error::Structure(format!(
                "plane {bad} has shape {:?}, expected {shape:?}",
                planes[bad].shape()
            )));
        }
        Ok(Self { planes })
    }

    pub fn bits(&self) -> u8 {
        self.planes.len() as u8
    }

    pub fn planes(&self) -> &[Matrix<u8>] {
        &self.planes
    }

    pub fn shape(&self) -> (usize, usize) {
        self.planes[0].shape()
    }
}

pub fn bit_decompose(qm: &QuantMatrix) -> BitPlanes {
    let planes = (0..qm.bits())
        .map(|bit| qm.values().map(|&v| (v >> bit) & 1))
        .collect();
    BitPlanes { planes }
}

/// Recomposes `sum_i 2^i * plane_i`. Planes must be 0/1.
pub fn to_val(planes: &BitPlanes) -> Result<QuantMatrix> {
    let (rows, cols) = planes.shape();
    let mut out = Matrix::<u8>::zeros(rows, cols);
    for (bit, plane) in planes.planes().iter().enumerate() {
        for r in 0..rows {
            for (c, &b) in plane.row(r).iter().enumerate() {
                if b > 1 {
                    return Err(Error::NonBinary {
                        row: r,
                        col: c,
                        value: b,
                    });
                }
                out[(r, c)] |= b << bit;
            }
        }
    }
    Ok(QuantMatrix::new_unchecked(planes.bits(), out))
}
