//! The 8 x 128 x 8 one-bit tile primitive and the zero-tile scan.

use crate::bitpack::{Orientation, PackedBitMatrix};
use crate::error::{Error, Result};

pub const TILE_M: usize = 8;
pub const TILE_N: usize = 8;
pub const TILE_K_BITS: usize = 128;
pub const TILE_K_WORDS: usize = TILE_K_BITS / 32;

/// Eight rows of a column-wise operand, four words (128 bits) each.
pub type ATile = [[u32; TILE_K_WORDS]; TILE_M];
/// Eight columns of a row-wise operand, four words each.
pub type BTile = [[u32; TILE_K_WORDS]; TILE_N];
pub type AccTile = [[u32; TILE_N]; TILE_M];

/// AND + popcount 1-bit MMA: `acc[i][j] += sum_w popcount(a[i][w] & b[j][w])`.
#[inline(always)]
pub fn mma_tile_1bit(a: &ATile, b: &BTile, acc: &mut AccTile) {
    for (acc_row, a_row) in acc.iter_mut().zip(a) {
        for (cell, b_col) in acc_row.iter_mut().zip(b) {
            let mut n = 0;
            for w in 0..TILE_K_WORDS {
                n += (a_row[w] & b_col[w]).count_ones();
            }
            *cell += n;
        }
    }
}

#[inline(always)]
pub(crate) fn load_a_tile(a: &PackedBitMatrix, row_tile: usize, k_tile: usize) -> ATile {
    let wpl = a.words_per_line();
    let words = a.words();
    let mut tile = [[0u32; TILE_K_WORDS]; TILE_M];
    for (r, row) in tile.iter_mut().enumerate() {
        let start = (row_tile * TILE_M + r) * wpl + k_tile * TILE_K_WORDS;
        row.copy_from_slice(&words[start..start + TILE_K_WORDS]);
    }
    tile
}

#[inline(always)]
pub(crate) fn load_b_tile(b: &PackedBitMatrix, k_tile: usize, col_tile: usize) -> BTile {
    let wpl = b.words_per_line();
    let words = b.words();
    let mut tile = [[0u32; TILE_K_WORDS]; TILE_N];
    for (c, col) in tile.iter_mut().enumerate() {
        let start = (col_tile * TILE_N + c) * wpl + k_tile * TILE_K_WORDS;
        col.copy_from_slice(&words[start..start + TILE_K_WORDS]);
    }
    tile
}

/// Zero flags for every 8 x 128 tile of a column-wise 1-bit matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileMap {
    row_tiles: usize,
    col_tiles: usize,
    zero: Vec<bool>,
}

impl TileMap {
    pub fn row_tiles(&self) -> usize {
        self.row_tiles
    }

    pub fn col_tiles(&self) -> usize {
        self.col_tiles
    }

    pub fn total(&self) -> usize {
        self.zero.len()
    }

    #[inline]
    pub fn is_zero(&self, row_tile: usize, col_tile: usize) -> bool {
        self.zero[row_tile * self.col_tiles + col_tile]
    }

    pub fn zero_count(&self) -> usize {
        self.zero.iter().filter(|&&z| z).count()
    }

    pub fn nonzero_count(&self) -> usize {
        self.total() - self.zero_count()
    }

    pub fn zero_in_row(&self, row_tile: usize) -> usize {
        self.zero[row_tile * self.col_tiles..(row_tile + 1) * self.col_tiles]
            .iter()
            .filter(|&&z| z)
            .count()
    }

    pub(crate) fn matches(&self, a: &PackedBitMatrix) -> bool {
        self.row_tiles == a.padded_rows() / TILE_M
            && self.col_tiles == a.padded_cols() / TILE_K_BITS
    }
}

/// ORs the 32 words of each tile; a zero result marks the tile skippable.
pub fn scan_zero_tiles(a: &PackedBitMatrix) -> Result<TileMap> {
    if a.orientation() != Orientation::ColumnWise {
        return Err(Error::ShapeMismatch(
            "zero-tile scan expects a column-wise matrix".into(),
        ));
    }
    let row_tiles = a.padded_rows() / TILE_M;
    let col_tiles = a.padded_cols() / TILE_K_BITS;
    let wpl = a.words_per_line();
    let words = a.words();
    let mut zero = Vec::with_capacity(row_tiles * col_tiles);
    for rt in 0..row_tiles {
        for kt in 0..col_tiles {
            let mut acc = 0u32;
            for r in 0..TILE_M {
                let start = (rt * TILE_M + r) * wpl + kt * TILE_K_WORDS;
                for &w in &words[start..start + TILE_K_WORDS] {
                    acc |= w;
                }
            }
            zero.push(acc == 0);
        }
    }
    Ok(TileMap {
        row_tiles,
        col_tiles,
        zero,
    })
}
