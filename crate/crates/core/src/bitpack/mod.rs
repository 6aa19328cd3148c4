//! 3D-stacked bit compression.
//!
//! Each 1-bit plane is packed into 32-bit words along the GEMM reduction
//! dimension. Column-wise packing (left operand) stores every matrix row as
//! a run of words covering its columns; row-wise packing (right operand)
//! stores every column as a run of words covering its rows. Bit `j` of a
//! word is element `32 * w + j` of the run. The reduction dimension is
//! always padded to a multiple of 128; the other dimension to 8 or 128 as
//! chosen by the caller. Padding bits are always zero.

mod serial;

pub use serial::{deserialize, serialize, STACK_MAGIC, STACK_VERSION};
pub(crate) use serial::{read_stack, write_stack, Reader};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::{bit_decompose, BitPlanes, QuantMatrix, MAX_BITS};

pub const WORD_BITS: usize = 32;

/// Smallest multiple of 8 that is `>= n`.
pub fn pad8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

/// Smallest multiple of 128 that is `>= n`.
pub fn pad128(n: usize) -> usize {
    n.div_ceil(128) * 128
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Words run along each row; feeds the left operand of a GEMM.
    ColumnWise,
    /// Words run down each column; feeds the right operand of a GEMM.
    RowWise,
}

impl Orientation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Orientation::ColumnWise => 0,
            Orientation::RowWise => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Orientation::ColumnWise),
            1 => Some(Orientation::RowWise),
            _ => None,
        }
    }
}

/// Alignment of the non-reduction dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Pad8,
    Pad128,
}

impl Padding {
    pub fn apply(self, n: usize) -> usize {
        match self {
            Padding::Pad8 => pad8(n),
            Padding::Pad128 => pad128(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layout {
    pub orientation: Orientation,
    pub padding: Padding,
}

impl Layout {
    pub const fn column_wise(padding: Padding) -> Self {
        Self {
            orientation: Orientation::ColumnWise,
            padding,
        }
    }

    pub const fn row_wise(padding: Padding) -> Self {
        Self {
            orientation: Orientation::RowWise,
            padding,
        }
    }

    /// Padded `(rows, cols)` for a logical `rows x cols` matrix.
    pub fn padded_dims(&self, rows: usize, cols: usize) -> (usize, usize) {
        match self.orientation {
            Orientation::ColumnWise => (self.padding.apply(rows), pad128(cols)),
            Orientation::RowWise => (pad128(rows), self.padding.apply(cols)),
        }
    }
}

/// One packed 1-bit matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBitMatrix {
    orientation: Orientation,
    logical_rows: usize,
    logical_cols: usize,
    padded_rows: usize,
    padded_cols: usize,
    words: Vec<u32>,
}

impl PackedBitMatrix {
    pub fn zeros(rows: usize, cols: usize, layout: Layout) -> Self {
        let (padded_rows, padded_cols) = layout.padded_dims(rows, cols);
        Self {
            orientation: layout.orientation,
            logical_rows: rows,
            logical_cols: cols,
            padded_rows,
            padded_cols,
            words: vec![0; padded_rows * padded_cols / WORD_BITS],
        }
    }

    /// Packs a 0/1 matrix. Any other entry is a data error.
    pub fn pack(plane: &Matrix<u8>, layout: Layout) -> Result<Self> {
        let mut out = Self::zeros(plane.rows(), plane.cols(), layout);
        for r in 0..plane.rows() {
            for (c, &v) in plane.row(r).iter().enumerate() {
                match v {
                    0 => {}
                    1 => out.set(r, c),
                    value => {
                        return Err(Error::NonBinary {
                            row: r,
                            col: c,
                            value,
                        })
                    }
                }
            }
        }
        Ok(out)
    }

    /// Rebuilds a matrix from raw parts, validating geometry and padding purity.
    pub fn from_raw_parts(
        orientation: Orientation,
        logical_rows: usize,
        logical_cols: usize,
        padded_rows: usize,
        padded_cols: usize,
        words: Vec<u32>,
    ) -> Result<Self> {
        let (k_pad, other_pad) = match orientation {
            Orientation::ColumnWise => (padded_cols, padded_rows),
            Orientation::RowWise => (padded_rows, padded_cols),
        };
        if k_pad % 128 != 0 || other_pad % 8 != 0 {
            return Err(Error::Structure(format!(
                "padded dims {padded_rows}x{padded_cols} violate tile alignment"
            )));
        }
        if padded_rows < logical_rows || padded_cols < logical_cols {
            return Err(Error::Structure(format!(
                "padded dims {padded_rows}x{padded_cols} smaller than logical {logical_rows}x{logical_cols}"
            )));
        }
        let expected = padded_rows * padded_cols / WORD_BITS;
        if words.len() != expected {
            return Err(Error::Structure(format!(
                "word count {} does not match {padded_rows}x{padded_cols} (expected {expected})",
                words.len()
            )));
        }
        let m = Self {
            orientation,
            logical_rows,
            logical_cols,
            padded_rows,
            padded_cols,
            words,
        };
        if !m.padding_is_zero() {
            return Err(Error::Structure("non-zero bits in padding region".into()));
        }
        Ok(m)
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn logical_rows(&self) -> usize {
        self.logical_rows
    }

    pub fn logical_cols(&self) -> usize {
        self.logical_cols
    }

    pub fn padded_rows(&self) -> usize {
        self.padded_rows
    }

    pub fn padded_cols(&self) -> usize {
        self.padded_cols
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    /// Number of lines (rows for column-wise, columns for row-wise), padded.
    pub fn lines(&self) -> usize {
        match self.orientation {
            Orientation::ColumnWise => self.padded_rows,
            Orientation::RowWise => self.padded_cols,
        }
    }

    /// Words per line, i.e. padded reduction length / 32.
    pub fn words_per_line(&self) -> usize {
        match self.orientation {
            Orientation::ColumnWise => self.padded_cols / WORD_BITS,
            Orientation::RowWise => self.padded_rows / WORD_BITS,
        }
    }

    pub fn line(&self, line: usize) -> &[u32] {
        let wpl = self.words_per_line();
        &self.words[line * wpl..(line + 1) * wpl]
    }

    fn locate(&self, r: usize, c: usize) -> (usize, u32) {
        let (line, offset) = match self.orientation {
            Orientation::ColumnWise => (r, c),
            Orientation::RowWise => (c, r),
        };
        (
            line * self.words_per_line() + offset / WORD_BITS,
            (offset % WORD_BITS) as u32,
        )
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(
            r < self.logical_rows && c < self.logical_cols,
            "({r}, {c}) out of bounds"
        );
        let (w, b) = self.locate(r, c);
        (self.words[w] >> b) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize) {
        assert!(
            r < self.logical_rows && c < self.logical_cols,
            "({r}, {c}) out of bounds"
        );
        let (w, b) = self.locate(r, c);
        self.words[w] |= 1 << b;
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn unpack(&self) -> Matrix<u8> {
        Matrix::from_fn(self.logical_rows, self.logical_cols, |r, c| {
            u8::from(self.get(r, c))
        })
    }

    fn padding_is_zero(&self) -> bool {
        let (logical_lines, logical_len) = match self.orientation {
            Orientation::ColumnWise => (self.logical_rows, self.logical_cols),
            Orientation::RowWise => (self.logical_cols, self.logical_rows),
        };
        let wpl = self.words_per_line();
        for line in 0..self.lines() {
            let words = &self.words[line * wpl..(line + 1) * wpl];
            if line >= logical_lines {
                if words.iter().any(|&w| w != 0) {
                    return false;
                }
                continue;
            }
            for (w, &word) in words.iter().enumerate() {
                let start = w * WORD_BITS;
                let valid = logical_len.saturating_sub(start).min(WORD_BITS);
                let mask = if valid == WORD_BITS {
                    u32::MAX
                } else {
                    (1u32 << valid) - 1
                };
                if word & !mask != 0 {
                    return false;
                }
            }
        }
        true
    }
}

/// Packs a 0/1 matrix column-wise (left operand layout).
pub fn pack_colwise(plane: &Matrix<u8>, pad_rows_to: Padding) -> Result<PackedBitMatrix> {
    PackedBitMatrix::pack(plane, Layout::column_wise(pad_rows_to))
}

/// Packs a 0/1 matrix row-wise (right operand layout).
pub fn pack_rowwise(plane: &Matrix<u8>, pad_cols_to: Padding) -> Result<PackedBitMatrix> {
    PackedBitMatrix::pack(plane, Layout::row_wise(pad_cols_to))
}

pub fn unpack(p: &PackedBitMatrix) -> Matrix<u8> {
    p.unpack()
}

/// An n-bit matrix as n packed planes sharing one layout; plane `i` holds bit `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlaneStack {
    planes: Vec<PackedBitMatrix>,
}

impl BitPlaneStack {
    pub fn new(planes: Vec<PackedBitMatrix>) -> Result<Self> {
        let Some(first) = planes.first() else {
            return Err(Error::Structure("bit plane stack is empty".into()));
        };
        if planes.len() > usize::from(MAX_BITS) {
            return Err(Error::Structure(format!(
                "{} planes exceed {MAX_BITS}",
                planes.len()
            )));
        }
        let geometry = |p: &PackedBitMatrix| {
            (
                p.orientation,
                p.logical_rows,
                p.logical_cols,
                p.padded_rows,
                p.padded_cols,
            )
        };
        let want = geometry(first);
        if let Some(bad) = planes.iter().position(|p| geometry(p) != want) {
            return Err(Error::Structure(format!(
                "plane {bad} differs in layout from plane 0"
            )));
        }
        Ok(Self { planes })
    }

    /// Quantized matrix straight to packed planes, without materializing
    /// unpacked planes.
    pub fn from_quant(qm: &QuantMatrix, layout: Layout) -> Self {
        let mut planes: Vec<PackedBitMatrix> = (0..qm.bits())
            .map(|_| PackedBitMatrix::zeros(qm.rows(), qm.cols(), layout))
            .collect();
        for r in 0..qm.rows() {
            for (c, &v) in qm.values().row(r).iter().enumerate() {
                if v == 0 {
                    continue;
                }
                for (bit, plane) in planes.iter_mut().enumerate() {
                    if (v >> bit) & 1 == 1 {
                        plane.set(r, c);
                    }
                }
            }
        }
        Self { planes }
    }

    pub fn from_planes(planes: &BitPlanes, layout: Layout) -> Result<Self> {
        let packed = planes
            .planes()
            .iter()
            .map(|p| PackedBitMatrix::pack(p, layout))
            .collect::<Result<Vec<_>>>()?;
        Self::new(packed)
    }

    pub fn bits(&self) -> u8 {
        self.planes.len() as u8
    }

    pub fn planes(&self) -> &[PackedBitMatrix] {
        &self.planes
    }

    pub fn plane(&self, bit: usize) -> &PackedBitMatrix {
        &self.planes[bit]
    }

    pub fn orientation(&self) -> Orientation {
        self.planes[0].orientation
    }

    pub fn logical_rows(&self) -> usize {
        self.planes[0].logical_rows
    }

    pub fn logical_cols(&self) -> usize {
        self.planes[0].logical_cols
    }

    pub fn padded_rows(&self) -> usize {
        self.planes[0].padded_rows
    }

    pub fn padded_cols(&self) -> usize {
        self.planes[0].padded_cols
    }

    /// Packed size of all planes in bytes.
    pub fn byte_len(&self) -> usize {
        self.planes.iter().map(|p| p.words.len() * 4).sum()
    }

    pub fn unpack_planes(&self) -> BitPlanes {
        BitPlanes::new(self.planes.iter().map(PackedBitMatrix::unpack).collect())
            .expect("stack planes share one shape")
    }

    /// Decodes back to quantized levels.
    pub fn to_val(&self) -> QuantMatrix {
        let (rows, cols) = (self.logical_rows(), self.logical_cols());
        let mut out = Matrix::<u8>::zeros(rows, cols);
        for (bit, plane) in self.planes.iter().enumerate() {
            for r in 0..rows {
                for c in 0..cols {
                    out[(r, c)] |= u8::from(plane.get(r, c)) << bit;
                }
            }
        }
        QuantMatrix::new_unchecked(self.bits(), out)
    }

    /// Same values in another layout.
    pub fn repack(&self, layout: Layout) -> Self {
        Self::from_quant(&self.to_val(), layout)
    }

    pub fn layout_matches(&self, orientation: Orientation) -> bool {
        self.orientation() == orientation
    }

    /// Per-line sums of the quantized values along the reduction dimension:
    /// row sums for column-wise stacks, column sums for row-wise stacks.
    /// Only logical lines are returned.
    pub fn line_sums(&self) -> Vec<i64> {
        let lines = match self.orientation() {
            Orientation::ColumnWise => self.logical_rows(),
            Orientation::RowWise => self.logical_cols(),
        };
        (0..lines)
            .map(|line| {
                self.planes
                    .iter()
                    .enumerate()
                    .map(|(bit, p)| {
                        let ones: i64 =
                            p.line(line).iter().map(|w| i64::from(w.count_ones())).sum();
                        ones << bit
                    })
                    .sum()
            })
            .collect()
    }
}

/// Quantized matrix to unpacked planes to packed stack.
pub fn decompose_and_pack(qm: &QuantMatrix, layout: Layout) -> BitPlaneStack {
    BitPlaneStack::from_planes(&bit_decompose(qm), layout).expect("decomposed planes are binary")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn padding_helpers() {
        assert_eq!(pad8(10), 16);
        assert_eq!(pad8(8), 8);
        assert_eq!(pad8(0), 0);
        assert_eq!(pad128(200), 256);
        assert_eq!(pad128(128), 128);
        assert_eq!(pad128(1), 128);
        assert_eq!(pad128(0), 0);
    }

    #[test]
    fn colwise_bit_order_is_little_endian() {
        let mut m = Matrix::<u8>::zeros(1, 32);
        m[(0, 0)] = 1;
        let p = pack_colwise(&m, Padding::Pad8).unwrap();
        assert_eq!(p.words()[0], 0x0000_0001);

        let mut m = Matrix::<u8>::zeros(1, 32);
        m[(0, 31)] = 1;
        let p = pack_colwise(&m, Padding::Pad8).unwrap();
        assert_eq!(p.words()[0], 0x8000_0000);
        // The rest of the tile is padding.
        assert!(p.words()[1..].iter().all(|&w| w == 0));
    }

    #[test]
    fn rowwise_bit_order_is_little_endian() {
        let mut m = Matrix::<u8>::zeros(32, 1);
        m[(0, 0)] = 1;
        assert_eq!(
            pack_rowwise(&m, Padding::Pad8).unwrap().words()[0],
            0x0000_0001
        );
        let mut m = Matrix::<u8>::zeros(32, 1);
        m[(31, 0)] = 1;
        assert_eq!(
            pack_rowwise(&m, Padding::Pad8).unwrap().words()[0],
            0x8000_0000
        );
    }

    #[test]
    fn three_bit_colwise_stack_shape() {
        let mut r = rng(1);
        let qm = QuantMatrix::new(3, Matrix::from_fn(10, 200, |_, _| r.gen_range(0..8))).unwrap();
        let s = decompose_and_pack(&qm, Layout::column_wise(Padding::Pad8));
        assert_eq!(s.bits(), 3);
        for p in s.planes() {
            assert_eq!(p.padded_rows(), 16);
            assert_eq!(p.words_per_line(), 8);
            assert_eq!(p.words().len(), 16 * 8);
        }
    }

    #[test]
    fn two_bit_rowwise_hidden_layer_shape() {
        let mut r = rng(2);
        let qm = QuantMatrix::new(2, Matrix::from_fn(200, 64, |_, _| r.gen_range(0..4))).unwrap();
        let s = decompose_and_pack(&qm, Layout::row_wise(Padding::Pad128));
        assert_eq!(s.bits(), 2);
        for p in s.planes() {
            assert_eq!(p.words_per_line(), 8);
            assert_eq!(p.padded_cols(), 128);
            assert_eq!(p.words().len(), 8 * 128);
        }
    }

    #[test]
    fn unpack_edge_cases() {
        let z = Matrix::<u8>::zeros(5, 9);
        assert_eq!(pack_colwise(&z, Padding::Pad8).unwrap().unpack(), z);
        let one = Matrix::from_vec(1, 1, vec![1u8]);
        assert_eq!(pack_rowwise(&one, Padding::Pad128).unwrap().unpack(), one);
    }

    #[test]
    fn non_binary_entry_is_rejected() {
        let m = Matrix::from_vec(1, 2, vec![0u8, 2]);
        assert!(matches!(
            pack_colwise(&m, Padding::Pad8),
            Err(Error::NonBinary {
                row: 0,
                col: 1,
                value: 2
            })
        ));
    }

    #[test]
    fn raw_parts_validation() {
        let p = PackedBitMatrix::zeros(3, 3, Layout::column_wise(Padding::Pad8));
        let words = p.words().to_vec();
        assert!(PackedBitMatrix::from_raw_parts(
            Orientation::ColumnWise,
            3,
            3,
            8,
            128,
            words.clone()
        )
        .is_ok());
        assert!(matches!(
            PackedBitMatrix::from_raw_parts(
                Orientation::ColumnWise,
                3,
                3,
                8,
                128,
                words[1..].to_vec()
            ),
            Err(Error::Structure(_))
        ));
        let mut dirty = words;
        dirty[0] = 1 << 5; // column 5 lies in padding
        assert!(
            PackedBitMatrix::from_raw_parts(Orientation::ColumnWise, 3, 3, 8, 128, dirty).is_err()
        );
    }

    #[test]
    fn direct_packing_matches_decompose_then_pack() {
        let mut r = rng(3);
        for bits in 1..=8u8 {
            let max = ((1u32 << bits) - 1) as u8;
            let qm = QuantMatrix::new(bits, Matrix::from_fn(13, 150, |_, _| r.gen_range(0..=max)))
                .unwrap();
            for layout in [
                Layout::column_wise(Padding::Pad8),
                Layout::row_wise(Padding::Pad128),
            ] {
                assert_eq!(
                    BitPlaneStack::from_quant(&qm, layout),
                    decompose_and_pack(&qm, layout)
                );
            }
        }
    }

    #[test]
    fn line_sums_match_dense_sums() {
        let mut r = rng(4);
        let qm = QuantMatrix::new(5, Matrix::from_fn(20, 40, |_, _| r.gen_range(0..32))).unwrap();
        let col = BitPlaneStack::from_quant(&qm, Layout::column_wise(Padding::Pad8));
        let row = BitPlaneStack::from_quant(&qm, Layout::row_wise(Padding::Pad8));
        let row_sums: Vec<i64> = (0..20)
            .map(|i| qm.values().row(i).iter().map(|&v| i64::from(v)).sum())
            .collect();
        let col_sums: Vec<i64> = (0..40)
            .map(|j| (0..20).map(|i| i64::from(qm.get(i, j))).sum())
            .collect();
        assert_eq!(col.line_sums(), row_sums);
        assert_eq!(row.line_sums(), col_sums);
    }

    #[test]
    fn repack_preserves_values() {
        let mut r = rng(5);
        let qm = QuantMatrix::new(4, Matrix::from_fn(30, 17, |_, _| r.gen_range(0..16))).unwrap();
        let s = BitPlaneStack::from_quant(&qm, Layout::row_wise(Padding::Pad8));
        let t = s.repack(Layout::column_wise(Padding::Pad128));
        assert_eq!(t.orientation(), Orientation::ColumnWise);
        assert_eq!(t.to_val(), qm);
    }

    fn binary_matrix(max: usize) -> impl Strategy<Value = Matrix<u8>> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0u8..=1, r * c).prop_map(move |v| Matrix::from_vec(r, c, v))
        })
    }

    fn layout() -> impl Strategy<Value = Layout> {
        prop_oneof![
            Just(Layout::column_wise(Padding::Pad8)),
            Just(Layout::column_wise(Padding::Pad128)),
            Just(Layout::row_wise(Padding::Pad8)),
            Just(Layout::row_wise(Padding::Pad128)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pack_unpack_identity(m in binary_matrix(300), layout in layout()) {
            let p = PackedBitMatrix::pack(&m, layout).unwrap();
            prop_assert_eq!(p.words().len(), p.padded_rows() * p.padded_cols() / 32);
            prop_assert!(p.padding_is_zero());
            prop_assert_eq!(p.unpack(), m);
        }

        #[test]
        fn colwise_layout_law(m in binary_matrix(200), seed in any::<u64>()) {
            let p = pack_colwise(&m, Padding::Pad8).unwrap();
            let mut r = rng(seed);
            let wpl = p.padded_cols() / 32;
            for _ in 0..32 {
                let (i, j) = (r.gen_range(0..m.rows()), r.gen_range(0..m.cols()));
                let word = p.words()[i * wpl + j / 32];
                prop_assert_eq!(u8::try_from((word >> (j % 32)) & 1).unwrap(), m[(i, j)]);
            }
        }
    }
}
