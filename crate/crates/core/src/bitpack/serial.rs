//! Binary encoding of a [`BitPlaneStack`].
//!
//! All integers little-endian:
//!
//! ```text
//! "QGTC"  u16 version  u8 orientation  u8 bits
//! u32 logical_rows  u32 logical_cols  u32 padded_rows  u32 padded_cols
//! bits * (padded_rows * padded_cols / 32) u32 words, plane 0 first
//! ```

use super::{BitPlaneStack, Orientation, PackedBitMatrix, WORD_BITS};
use crate::error::{Error, Result};
use crate::quantizer::MAX_BITS;

pub const STACK_MAGIC: [u8; 4] = *b"QGTC";
pub const STACK_VERSION: u16 = 1;
pub(crate) const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 * 4;

pub fn serialize(stack: &BitPlaneStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + stack.byte_len());
    write_stack(stack, &mut out);
    out
}

pub(crate) fn write_stack(stack: &BitPlaneStack, out: &mut Vec<u8>) {
    out.extend_from_slice(&STACK_MAGIC);
    out.extend_from_slice(&STACK_VERSION.to_le_bytes());
    out.push(stack.orientation().code());
    out.push(stack.bits());
    for dim in [
        stack.logical_rows(),
        stack.logical_cols(),
        stack.padded_rows(),
        stack.padded_cols(),
    ] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for plane in stack.planes() {
        for w in plane.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
}

/// Decodes a stack; the input must contain exactly one stack.
pub fn deserialize(bytes: &[u8]) -> Result<BitPlaneStack> {
    let mut reader = Reader::new(bytes);
    let stack = read_stack(&mut reader)?;
    if reader.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after stack",
            reader.remaining()
        )));
    }
    Ok(stack)
}

pub(crate) fn read_stack(reader: &mut Reader<'_>) -> Result<BitPlaneStack> {
    let magic = reader.take(4)?;
    if magic != STACK_MAGIC {
        return Err(Error::Format(format!("bad stack magic {magic:02x?}")));
    }
    let version = reader.u16()?;
    if version != STACK_VERSION {
        return Err(Error::Format(format!(
            "unsupported stack version {version}"
        )));
    }
    let orientation = Orientation::from_code(reader.u8()?)
        .ok_or_else(|| Error::Format("unknown orientation code".into()))?;
    let bits = reader.u8()?;
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(Error::Format(format!(
            "bit count {bits} outside [1, {MAX_BITS}]"
        )));
    }
    let logical_rows = reader.u32()? as usize;
    let logical_cols = reader.u32()? as usize;
    let padded_rows = reader.u32()? as usize;
    let padded_cols = reader.u32()? as usize;
    let per_plane = padded_rows
        .checked_mul(padded_cols)
        .map(|n| n / WORD_BITS)
        .ok_or_else(|| Error::Format("padded dims overflow".into()))?;
    if reader.remaining() / 4 < per_plane.saturating_mul(usize::from(bits)) {
        return Err(Error::Format("truncated stack payload".into()));
    }
    let mut planes = Vec::with_capacity(usize::from(bits));
    for _ in 0..bits {
        let words = (0..per_plane)
            .map(|_| reader.u32())
            .collect::<Result<Vec<_>>>()?;
        let plane = PackedBitMatrix::from_raw_parts(
            orientation,
            logical_rows,
            logical_cols,
            padded_rows,
            padded_cols,
            words,
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        planes.push(plane);
    }
    BitPlaneStack::new(planes)
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated input: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
