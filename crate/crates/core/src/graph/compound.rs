//! Single-allocation transfer object for a [`SubgraphBatch`].
//!
//! All integers little-endian:
//!
//! ```text
//! "QGTB"  u16 version  u32 num_subgraphs  u32 total_nodes  u8 feature_bits
//! f64 alpha_min  f64 alpha_max  u8 quant_bits
//! u64 offsets: boundaries, node_ids, adjacency, features, end
//! boundaries: (num_subgraphs + 1) u32
//! node_ids:   total_nodes u32
//! adjacency:  u32 logical_rows  u32 logical_cols  u32 padded_rows  u32 padded_cols
//!             ceil(rows * cols / 32) u32 words of row-major logical bits
//! features:   serialized stack (row-wise), empty when feature_bits = 0
//! ```
//!
//! The adjacency drops its column padding on the wire so the section stays
//! at one bit per logical entry; unpacking restores the padded layout.

use super::batch::SubgraphBatch;
use crate::bitpack::{
    read_stack, write_stack, BitPlaneStack, Orientation, PackedBitMatrix, Reader,
};
use crate::error::{Error, Result};
use crate::quantizer::QuantParams;

pub const COMPOUND_MAGIC: [u8; 4] = *b"QGTB";
pub const COMPOUND_VERSION: u16 = 1;
const SECTIONS: usize = 4;
pub(crate) const COMPOUND_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1 + 8 + 8 + 1 + 8 * (SECTIONS + 1);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundBuffer {
    bytes: Vec<u8>,
    offsets: [u64; SECTIONS + 1],
}

impl CompoundBuffer {
    /// Validates the header and section table without decoding sections.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let offsets = read_header(&bytes)?.offsets;
        Ok(Self { bytes, offsets })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn header_len(&self) -> usize {
        COMPOUND_HEADER_LEN
    }

    fn section(&self, i: usize) -> usize {
        (self.offsets[i + 1] - self.offsets[i]) as usize
    }

    pub fn adjacency_bytes(&self) -> usize {
        self.section(2)
    }

    pub fn feature_bytes(&self) -> usize {
        self.section(3)
    }
}

struct Header {
    num_subgraphs: usize,
    total_nodes: usize,
    feature_bits: u8,
    quant: QuantParams,
    offsets: [u64; SECTIONS + 1],
}

fn read_header(bytes: &[u8]) -> Result<Header> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != COMPOUND_MAGIC {
        return Err(Error::Format("bad compound buffer magic".into()));
    }
    let version = r.u16()?;
    if version != COMPOUND_VERSION {
        return Err(Error::Format(format!(
            "unsupported compound buffer version {version}"
        )));
    }
    let num_subgraphs = r.u32()? as usize;
    let total_nodes = r.u32()? as usize;
    let feature_bits = r.u8()?;
    let (lo, hi, bits) = (r.f64()?, r.f64()?, r.u8()?);
    let quant =
        QuantParams::new(lo, hi, bits).map_err(|e| Error::Format(format!("quant params: {e}")))?;
    let mut offsets = [0u64; SECTIONS + 1];
    for o in &mut offsets {
        *o = r.u64()?;
    }
    if offsets[0] != COMPOUND_HEADER_LEN as u64
        || offsets.windows(2).any(|w| w[0] > w[1])
        || offsets[SECTIONS] != bytes.len() as u64
    {
        return Err(Error::Format(format!(
            "section offsets {offsets:?} inconsistent with {} byte buffer",
            bytes.len()
        )));
    }
    let expect = |i: usize, len: usize| -> Result<()> {
        if offsets[i + 1] - offsets[i] != len as u64 {
            return Err(Error::Format(format!("section {i} has wrong length")));
        }
        Ok(())
    };
    expect(0, 4 * (num_subgraphs + 1))?;
    expect(1, 4 * total_nodes)?;
    if (feature_bits == 0) != (offsets[4] == offsets[3]) {
        return Err(Error::Format(
            "feature section disagrees with feature_bits".into(),
        ));
    }
    Ok(Header {
        num_subgraphs,
        total_nodes,
        feature_bits,
        quant,
        offsets,
    })
}

const ADJ_HEADER_LEN: usize = 16;

fn adjacency_section_len(rows: usize, cols: usize) -> usize {
    ADJ_HEADER_LEN + 4 * (rows * cols).div_ceil(32)
}

fn write_adjacency(a: &PackedBitMatrix, out: &mut Vec<u8>) {
    for dim in [
        a.logical_rows(),
        a.logical_cols(),
        a.padded_rows(),
        a.padded_cols(),
    ] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    let cols = a.logical_cols();
    let (mut acc, mut filled) = (0u64, 0usize);
    for r in 0..a.logical_rows() {
        for (i, &w) in a.line(r).iter().enumerate().take(cols.div_ceil(32)) {
            let n = (cols - 32 * i).min(32);
            let bits = if n == 32 { w } else { w & ((1 << n) - 1) };
            acc |= u64::from(bits) << filled;
            filled += n;
            if filled >= 32 {
                out.extend_from_slice(&(acc as u32).to_le_bytes());
                acc >>= 32;
                filled -= 32;
            }
        }
    }
    if filled > 0 {
        out.extend_from_slice(&(acc as u32).to_le_bytes());
    }
}

fn read_adjacency(section: &[u8]) -> Result<PackedBitMatrix> {
    let mut r = Reader::new(section);
    let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
    let (padded_rows, padded_cols) = (r.u32()? as usize, r.u32()? as usize);
    if section.len() != adjacency_section_len(rows, cols) {
        return Err(Error::Format(format!(
            "adjacency section length does not fit {rows}x{cols}"
        )));
    }
    let fits = |logical: usize, padded: usize, align: usize| {
        padded >= logical && padded < logical + align.max(128) && padded.is_multiple_of(align)
    };
    if !fits(rows, padded_rows, 8) || !fits(cols, padded_cols, 128) {
        return Err(Error::Format(format!(
            "bad adjacency padding {padded_rows}x{padded_cols}"
        )));
    }
    let stream: Vec<u32> = r
        .take(r.remaining())?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if (rows * cols) % 32 != 0
        && stream
            .last()
            .is_some_and(|&w| w >> ((rows * cols) % 32) != 0)
    {
        return Err(Error::Format(
            "stray bits after the adjacency stream".into(),
        ));
    }
    let wpl = padded_cols / 32;
    let mut words = vec![0u32; padded_rows * wpl];
    let mut pos = 0usize;
    for row in 0..rows {
        for i in 0..cols.div_ceil(32) {
            let n = (cols - 32 * i).min(32);
            let (w, b) = (pos / 32, pos % 32);
            let mut v = u64::from(stream[w]) >> b;
            if b + n > 32 {
                v |= u64::from(stream[w + 1]) << (32 - b);
            }
            words[row * wpl + i] = (v & ((1u64 << n) - 1)) as u32;
            pos += n;
        }
    }
    PackedBitMatrix::from_raw_parts(
        Orientation::ColumnWise,
        rows,
        cols,
        padded_rows,
        padded_cols,
        words,
    )
    .map_err(|e| Error::Format(format!("adjacency: {e}")))
}

pub fn pack_batch(b: &SubgraphBatch) -> CompoundBuffer {
    let adjacency = b.adjacency();
    let feature_bits = b.features().map_or(0, BitPlaneStack::bits);
    let q = b.x_quant();

    let mut out = Vec::with_capacity(
        COMPOUND_HEADER_LEN
            + 4 * (b.boundaries().len() + b.total_nodes())
            + adjacency_section_len(adjacency.logical_rows(), adjacency.logical_cols())
            + 24
            + b.features().map_or(0, BitPlaneStack::byte_len),
    );
    out.extend_from_slice(&COMPOUND_MAGIC);
    out.extend_from_slice(&COMPOUND_VERSION.to_le_bytes());
    out.extend_from_slice(&(b.num_subgraphs() as u32).to_le_bytes());
    out.extend_from_slice(&(b.total_nodes() as u32).to_le_bytes());
    out.push(feature_bits);
    out.extend_from_slice(&q.alpha_min().to_le_bytes());
    out.extend_from_slice(&q.alpha_max().to_le_bytes());
    out.push(q.bits());
    let table = out.len();
    out.resize(COMPOUND_HEADER_LEN, 0);

    let mut offsets = [0u64; SECTIONS + 1];
    offsets[0] = out.len() as u64;
    for &x in b.boundaries() {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    offsets[1] = out.len() as u64;
    for &v in b.node_ids() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    offsets[2] = out.len() as u64;
    write_adjacency(adjacency, &mut out);
    offsets[3] = out.len() as u64;
    if let Some(f) = b.features() {
        write_stack(f, &mut out);
    }
    offsets[4] = out.len() as u64;
    for (i, o) in offsets.iter().enumerate() {
        out[table + 8 * i..table + 8 * (i + 1)].copy_from_slice(&o.to_le_bytes());
    }
    CompoundBuffer {
        bytes: out,
        offsets,
    }
}

pub fn unpack_batch(buf: &CompoundBuffer) -> Result<SubgraphBatch> {
    let bytes = buf.as_bytes();
    let h = read_header(bytes)?;
    let section = |i: usize| &bytes[h.offsets[i] as usize..h.offsets[i + 1] as usize];
    let u32s = |s: &[u8]| -> Vec<u32> {
        s.chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let boundaries: Vec<usize> = u32s(section(0)).into_iter().map(|x| x as usize).collect();
    let node_ids = u32s(section(1));

    let adjacency = read_adjacency(section(2))?;

    let features = if h.feature_bits == 0 {
        None
    } else {
        let mut r = Reader::new(section(3));
        let f = read_stack(&mut r)?;
        if r.remaining() != 0 || f.bits() != h.feature_bits {
            return Err(Error::Format(
                "feature section disagrees with header".into(),
            ));
        }
        Some(f)
    };
    if boundaries.len() != h.num_subgraphs + 1 || node_ids.len() != h.total_nodes {
        return Err(Error::Format(
            "node tables disagree with header counts".into(),
        ));
    }
    SubgraphBatch::from_parts(node_ids, boundaries, adjacency, features, h.quant)
        .map_err(|e| Error::Format(format!("invalid batch: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_batch, partition, PartitionAssignment, SyntheticGraph};
    use crate::Graph;

    fn quant(bits: u8) -> QuantParams {
        QuantParams::new(0.0, 1.0, bits).unwrap()
    }

    #[test]
    fn random_batches_round_trip() {
        for seed in 0..6 {
            let g = SyntheticGraph {
                nodes: 300 + 50 * seed as usize,
                clusters: 5,
                intra_degree: 6.0,
                inter_degree: 1.0,
                feature_dim: if seed % 3 == 0 { 0 } else { 7 + seed as usize },
            }
            .generate(seed)
            .unwrap();
            let a = partition(&g, 6, seed).unwrap();
            let b = build_batch(&g, &a, &[5, 1, 3], &quant(1 + seed as u8), seed % 2 == 0).unwrap();
            let buf = pack_batch(&b);
            assert_eq!(unpack_batch(&buf).unwrap(), b);
            let again = CompoundBuffer::from_bytes(buf.as_bytes().to_vec()).unwrap();
            assert_eq!(
                pack_batch(&unpack_batch(&again).unwrap()).as_bytes(),
                buf.as_bytes()
            );
        }
    }

    #[test]
    fn adjacency_only_sections() {
        let g = Graph::new(10, [(0, 1), (1, 2)]).unwrap();
        let a = PartitionAssignment::new(1, vec![0; 10]).unwrap();
        let b = build_batch(&g, &a, &[0], &quant(2), true).unwrap();
        let buf = pack_batch(&b);
        assert_eq!(buf.feature_bytes(), 0);
        assert_eq!(buf.as_bytes()[14], 0);
        assert_eq!(unpack_batch(&buf).unwrap(), b);
    }

    #[test]
    fn adjacency_section_is_bit_dense() {
        let n = 1024;
        let g = Graph::new(n, (0..n).map(|v| (v, (v * 7 + 3) % n))).unwrap();
        let a = PartitionAssignment::new(1, vec![0; n]).unwrap();
        let b = build_batch(&g, &a, &[0], &quant(1), true).unwrap();
        let buf = pack_batch(&b);
        assert_eq!(buf.adjacency_bytes(), 16 + n * n / 8);
        assert!(buf.len() * 30 <= 4 * n * n);
        assert_eq!(b.float32_dense_bytes(), 4 << 20);
    }

    #[test]
    fn odd_sizes_keep_padding_off_the_wire() {
        for n in [1, 31, 33, 129, 1025] {
            let g = Graph::new(n, (0..n).map(|v| (v, (v * 5 + 1) % n))).unwrap();
            let a = PartitionAssignment::new(1, vec![0; n]).unwrap();
            let b = build_batch(&g, &a, &[0], &quant(1), true).unwrap();
            let buf = pack_batch(&b);
            assert_eq!(buf.adjacency_bytes(), 16 + 4 * (n * n).div_ceil(32));
            assert_eq!(unpack_batch(&buf).unwrap(), b);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let g = Graph::new(20, (0..19).map(|v| (v, v + 1))).unwrap();
        let a = PartitionAssignment::new(2, (0..20).map(|v| u32::from(v >= 10)).collect()).unwrap();
        let b = build_batch(&g, &a, &[0, 1], &quant(3), false).unwrap();
        let good = pack_batch(&b).into_bytes();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            CompoundBuffer::from_bytes(bad),
            Err(Error::Format(_))
        ));

        let mut bad = good.clone();
        bad.pop();
        assert!(CompoundBuffer::from_bytes(bad).is_err());

        // Node count in the header no longer matches the node_ids section.
        let mut bad = good.clone();
        bad[10] ^= 1;
        assert!(CompoundBuffer::from_bytes(bad).is_err());

        // Set an adjacency bit linking the two subgraphs.
        let buf = CompoundBuffer::from_bytes(good.clone()).unwrap();
        let mut bad = good;
        let adj_words = buf.offsets[2] as usize + 16;
        bad[adj_words + 1] |= 0x08; // row 0, column 11
        let bad = CompoundBuffer::from_bytes(bad).unwrap();
        assert!(matches!(unpack_batch(&bad), Err(Error::Format(_))));
    }
}
