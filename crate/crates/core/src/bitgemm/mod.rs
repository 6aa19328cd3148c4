//! Software 1-bit tile MMA and the any-bitwidth GEMMs built on it.
//!
//! The left operand is packed column-wise and the right operand row-wise,
//! so every 8 x 128 x 8 tile product reads 8 x 4 words from each side.
//! Work is split over 8-row output stripes; each worker owns its stripe's
//! accumulators and reads the packed inputs shared.

mod epilogue;
mod kernel;
mod tile;

use std::ops::AddAssign;

pub use epilogue::{
    apply_epilogue, Activation, Affine, BatchNorm, Dequant, EpilogueOutput, EpilogueSpec,
    Requantize,
};
pub use kernel::{
    aggregate, bmm_1bit_by_nbit, bmm_1bit_by_nbit_with_map, gemm_sbit_by_tbit, reduce_planes,
    BmmOutput, GemmOutput, GemmResult, GemmRun,
};
pub use tile::{
    mma_tile_1bit, scan_zero_tiles, ATile, AccTile, BTile, TileMap, TILE_K_BITS, TILE_K_WORDS,
    TILE_M, TILE_N,
};

use crate::matrix::Matrix;

/// Reduced int32 GEMM output.
pub type AccumulatorMatrix = Matrix<i32>;

/// How left-operand tiles are reused across the planes of the right operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Reuse {
    /// Finish each output plane before the next; left tiles are reloaded per plane.
    CrossBit,
    /// Load each left tile once and multiply it against every right plane.
    #[default]
    CrossTile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GemmOptions {
    /// Skip all-zero left tiles.
    pub jump: bool,
    pub reuse: Reuse,
}

impl Default for GemmOptions {
    fn default() -> Self {
        Self {
            jump: true,
            reuse: Reuse::CrossTile,
        }
    }
}

impl GemmOptions {
    /// Every combination of jump on/off and reuse strategy.
    pub fn all() -> [GemmOptions; 4] {
        [
            GemmOptions {
                jump: false,
                reuse: Reuse::CrossBit,
            },
            GemmOptions {
                jump: false,
                reuse: Reuse::CrossTile,
            },
            GemmOptions {
                jump: true,
                reuse: Reuse::CrossBit,
            },
            GemmOptions {
                jump: true,
                reuse: Reuse::CrossTile,
            },
        ]
    }
}

/// Deterministic work counts for one kernel invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounters {
    /// 8 x 128 x 8 tile products executed.
    pub tile_mma_count: u64,
    /// Left-operand tiles loaded.
    pub tile_fetch_count: u64,
    /// Left-operand tiles skipped as all-zero.
    pub tiles_skipped: u64,
    /// Left-operand tiles visited, skipped or not.
    pub total_tiles: u64,
    /// 32-bit AND + popcount operations.
    pub word_and_popcount_count: u64,
}

impl OpCounters {
    /// Fraction of left tiles skipped, in `[0, 1]`.
    pub fn skip_ratio(&self) -> f64 {
        if self.total_tiles == 0 {
            0.0
        } else {
            self.tiles_skipped as f64 / self.total_tiles as f64
        }
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.tile_mma_count += rhs.tile_mma_count;
        self.tile_fetch_count += rhs.tile_fetch_count;
        self.tiles_skipped += rhs.tiles_skipped;
        self.total_tiles += rhs.total_tiles;
        self.word_and_popcount_count += rhs.word_and_popcount_count;
    }
}
