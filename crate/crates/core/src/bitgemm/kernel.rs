use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::epilogue::EpilogueSpec;
use super::tile::{
    load_a_tile, load_b_tile, mma_tile_1bit, scan_zero_tiles, AccTile, TileMap, TILE_K_BITS,
    TILE_M, TILE_N,
};
use super::{AccumulatorMatrix, GemmOptions, OpCounters, Reuse};
use crate::bitpack::{BitPlaneStack, Orientation, PackedBitMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::QuantMatrix;

/// What a reducing GEMM should produce.
#[derive(Debug, Clone, Copy)]
pub enum GemmOutput<'a> {
    /// Shifted, reduced int32 accumulators.
    Int32,
    /// Epilogue fused into each row-tile worker.
    Epilogue(&'a EpilogueSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GemmResult {
    Int32(AccumulatorMatrix),
    Real(Matrix<f64>),
    BitPlanes(BitPlaneStack),
}

impl GemmResult {
    pub fn into_int32(self) -> Option<AccumulatorMatrix> {
        match self {
            GemmResult::Int32(m) => Some(m),
            _ => None,
        }
    }

    pub fn into_real(self) -> Option<Matrix<f64>> {
        match self {
            GemmResult::Real(m) => Some(m),
            _ => None,
        }
    }

    pub fn into_planes(self) -> Option<BitPlaneStack> {
        match self {
            GemmResult::BitPlanes(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GemmRun {
    pub result: GemmResult,
    pub counters: OpCounters,
    /// CPU time spent in fused epilogues, summed over workers.
    pub epilogue_time: Duration,
}

/// Per-plane products of a 1-bit matrix with each plane of an s-bit stack.
#[derive(Debug, Clone)]
pub struct BmmOutput {
    pub planes: Vec<AccumulatorMatrix>,
    pub counters: OpCounters,
}

/// Raw per-plane-pair popcount sums for one 8-row stripe of the output.
struct RawTile {
    right_planes: usize,
    col_tiles: usize,
    acc: Vec<AccTile>,
}

impl RawTile {
    fn new(left_planes: usize, right_planes: usize, col_tiles: usize) -> Self {
        Self {
            right_planes,
            col_tiles,
            acc: vec![[[0; TILE_N]; TILE_M]; left_planes * right_planes * col_tiles],
        }
    }

    fn clear(&mut self) {
        self.acc.iter_mut().for_each(|t| *t = [[0; TILE_N]; TILE_M]);
    }

    #[inline]
    fn tile_mut(&mut self, i: usize, j: usize, ct: usize) -> &mut AccTile {
        &mut self.acc[(i * self.right_planes + j) * self.col_tiles + ct]
    }

    #[inline]
    fn count(&self, i: usize, j: usize, row: usize, col: usize) -> u32 {
        self.acc[(i * self.right_planes + j) * self.col_tiles + col / TILE_N][row][col % TILE_N]
    }
}

struct Operands<'a> {
    left: &'a [PackedBitMatrix],
    maps: Option<&'a [TileMap]>,
    right: &'a [PackedBitMatrix],
    k_tiles: usize,
    col_tiles: usize,
    row_tiles: usize,
}

impl<'a> Operands<'a> {
    fn new(
        left: &'a [PackedBitMatrix],
        maps: Option<&'a [TileMap]>,
        right: &'a [PackedBitMatrix],
    ) -> Result<Self> {
        let (Some(l), Some(r)) = (left.first(), right.first()) else {
            return Err(Error::ShapeMismatch("GEMM operand has no planes".into()));
        };
        if left
            .iter()
            .any(|p| p.orientation() != Orientation::ColumnWise)
        {
            return Err(Error::ShapeMismatch(
                "left operand must be packed column-wise".into(),
            ));
        }
        if right
            .iter()
            .any(|p| p.orientation() != Orientation::RowWise)
        {
            return Err(Error::ShapeMismatch(
                "right operand must be packed row-wise".into(),
            ));
        }
        if l.logical_cols() != r.logical_rows() || l.padded_cols() != r.padded_rows() {
            return Err(Error::ShapeMismatch(format!(
                "inner dimensions differ: left {}x{} (padded K {}), right {}x{} (padded K {})",
                l.logical_rows(),
                l.logical_cols(),
                l.padded_cols(),
                r.logical_rows(),
                r.logical_cols(),
                r.padded_rows()
            )));
        }
        if let Some(maps) = maps {
            if maps.len() != left.len() || maps.iter().zip(left).any(|(m, p)| !m.matches(p)) {
                return Err(Error::ShapeMismatch(
                    "tile map does not match left operand".into(),
                ));
            }
        }
        Ok(Self {
            left,
            maps,
            right,
            k_tiles: l.padded_cols() / TILE_K_BITS,
            col_tiles: r.padded_cols() / TILE_N,
            row_tiles: l.padded_rows() / TILE_M,
        })
    }

    fn rows(&self) -> usize {
        self.left[0].logical_rows()
    }

    fn cols(&self) -> usize {
        self.right[0].logical_cols()
    }

    /// Runs the tile loop for every row tile in parallel, handing each
    /// finished stripe to `finalize`. Results come back in row-tile order.
    fn drive<R, F>(&self, opts: &GemmOptions, finalize: F) -> Result<(Vec<R>, OpCounters)>
    where
        R: Send,
        F: Fn(usize, &RawTile) -> Result<R> + Sync,
    {
        let (s, t) = (self.left.len(), self.right.len());
        let results: Vec<Result<(R, OpCounters)>> = (0..self.row_tiles)
            .into_par_iter()
            .map_init(
                || RawTile::new(s, t, self.col_tiles),
                |raw, rt| {
                    raw.clear();
                    let mut counters = OpCounters::default();
                    accumulate_row_tile(self, rt, opts, raw, &mut counters);
                    Ok((finalize(rt, raw)?, counters))
                },
            )
            .collect();
        let mut out = Vec::with_capacity(results.len());
        let mut total = OpCounters::default();
        for r in results {
            let (value, counters) = r?;
            total += counters;
            out.push(value);
        }
        Ok((out, total))
    }
}

fn accumulate_row_tile(
    ops: &Operands<'_>,
    rt: usize,
    opts: &GemmOptions,
    raw: &mut RawTile,
    counters: &mut OpCounters,
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512vpopcntdq")
            && std::arch::is_x86_feature_detected!("avx512bw")
        {
            // SAFETY: the CPU supports the enabled features.
            unsafe { accumulate_row_tile_avx512(ops, rt, opts, raw, counters) };
            return;
        }
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports popcnt.
            unsafe { accumulate_row_tile_popcnt(ops, rt, opts, raw, counters) };
            return;
        }
    }
    accumulate_row_tile_impl(ops, rt, opts, raw, counters);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn accumulate_row_tile_popcnt(
    ops: &Operands<'_>,
    rt: usize,
    opts: &GemmOptions,
    raw: &mut RawTile,
    counters: &mut OpCounters,
) {
    accumulate_row_tile_impl(ops, rt, opts, raw, counters);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt,avx2,avx512f,avx512bw,avx512vl,avx512vpopcntdq")]
unsafe fn accumulate_row_tile_avx512(
    ops: &Operands<'_>,
    rt: usize,
    opts: &GemmOptions,
    raw: &mut RawTile,
    counters: &mut OpCounters,
) {
    accumulate_row_tile_impl(ops, rt, opts, raw, counters);
}

#[inline(always)]
fn accumulate_row_tile_impl(
    ops: &Operands<'_>,
    rt: usize,
    opts: &GemmOptions,
    raw: &mut RawTile,
    counters: &mut OpCounters,
) {
    let (s, t) = (ops.left.len(), ops.right.len());
    let jump_map = |i: usize| {
        if opts.jump {
            ops.maps.map(|m| &m[i])
        } else {
            None
        }
    };
    counters.total_tiles += (s * ops.k_tiles) as u64;

    match opts.reuse {
        // Each non-zero left tile is loaded once and reduced against every
        // right plane before moving on.
        Reuse::CrossTile => {
            for kt in 0..ops.k_tiles {
                for i in 0..s {
                    if jump_map(i).is_some_and(|m| m.is_zero(rt, kt)) {
                        counters.tiles_skipped += 1;
                        continue;
                    }
                    let a = load_a_tile(&ops.left[i], rt, kt);
                    counters.tile_fetch_count += 1;
                    for j in 0..t {
                        for ct in 0..ops.col_tiles {
                            let b = load_b_tile(&ops.right[j], kt, ct);
                            mma_tile_1bit(&a, &b, raw.tile_mut(i, j, ct));
                        }
                    }
                    counters.tile_mma_count += (t * ops.col_tiles) as u64;
                }
            }
        }
        // One complete output plane pair at a time; left tiles are reloaded
        // for every right plane.
        Reuse::CrossBit => {
            for i in 0..s {
                let map = jump_map(i);
                for j in 0..t {
                    for kt in 0..ops.k_tiles {
                        if map.is_some_and(|m| m.is_zero(rt, kt)) {
                            if j == 0 {
                                counters.tiles_skipped += 1;
                            }
                            continue;
                        }
                        let a = load_a_tile(&ops.left[i], rt, kt);
                        counters.tile_fetch_count += 1;
                        for ct in 0..ops.col_tiles {
                            let b = load_b_tile(&ops.right[j], kt, ct);
                            mma_tile_1bit(&a, &b, raw.tile_mut(i, j, ct));
                        }
                        counters.tile_mma_count += ops.col_tiles as u64;
                    }
                }
            }
        }
    }
    counters.word_and_popcount_count = counters.tile_mma_count * (TILE_M * TILE_N * 4) as u64;
}

/// Shifted reduction of all plane-pair products for one output element,
/// grouped by combined bit index.
#[inline]
fn reduce_element(raw: &RawTile, s: usize, t: usize, row: usize, col: usize) -> i64 {
    let mut v = 0i64;
    for bit_idx in 0..(s + t - 1) {
        let lo = bit_idx.saturating_sub(t - 1);
        let hi = bit_idx.min(s - 1);
        for i in lo..=hi {
            v += i64::from(raw.count(i, bit_idx - i, row, col)) << bit_idx;
        }
    }
    v
}

fn narrow(value: i64, row: usize, col: usize) -> Result<i32> {
    i32::try_from(value).map_err(|_| Error::Overflow { row, col, value })
}

fn maps_for(stack: &[PackedBitMatrix]) -> Result<Vec<TileMap>> {
    stack.iter().map(scan_zero_tiles).collect()
}

/// `A * plane_p(X)` for every plane `p` of `x`, kept separate.
pub fn bmm_1bit_by_nbit(
    a: &PackedBitMatrix,
    x: &BitPlaneStack,
    opts: &GemmOptions,
) -> Result<BmmOutput> {
    let map = if opts.jump {
        Some(scan_zero_tiles(a)?)
    } else {
        None
    };
    bmm_1bit_by_nbit_with_map(a, map.as_ref(), x, opts)
}

/// As [`bmm_1bit_by_nbit`] with a cached zero-tile map.
pub fn bmm_1bit_by_nbit_with_map(
    a: &PackedBitMatrix,
    map: Option<&TileMap>,
    x: &BitPlaneStack,
    opts: &GemmOptions,
) -> Result<BmmOutput> {
    let computed;
    let map = match map {
        Some(m) => Some(m),
        None if opts.jump => {
            computed = scan_zero_tiles(a)?;
            Some(&computed)
        }
        None => None,
    };
    let maps = map.map(std::slice::from_ref);
    let ops = Operands::new(std::slice::from_ref(a), maps, x.planes())?;
    let (rows, cols, t) = (ops.rows(), ops.cols(), x.planes().len());
    let (stripes, counters) = ops.drive(opts, |rt, raw| {
        let r0 = rt * TILE_M;
        let r1 = (r0 + TILE_M).min(rows);
        let stripe: Vec<Vec<i32>> = (0..t)
            .map(|j| {
                let mut v = Vec::with_capacity(r1.saturating_sub(r0) * cols);
                for r in r0..r1 {
                    for c in 0..cols {
                        v.push(raw.count(0, j, r - r0, c) as i32);
                    }
                }
                v
            })
            .collect();
        Ok(stripe)
    })?;
    let mut planes: Vec<Vec<i32>> = vec![Vec::with_capacity(rows * cols); t];
    for stripe in stripes {
        for (dst, src) in planes.iter_mut().zip(stripe) {
            dst.extend(src);
        }
    }
    Ok(BmmOutput {
        planes: planes
            .into_iter()
            .map(|v| Matrix::from_vec(rows, cols, v))
            .collect(),
        counters,
    })
}

/// `sum_p plane_p << p`, narrowed to int32.
pub fn reduce_planes(planes: &[AccumulatorMatrix]) -> Result<AccumulatorMatrix> {
    let Some(first) = planes.first() else {
        return Err(Error::ShapeMismatch("no planes to reduce".into()));
    };
    let (rows, cols) = first.shape();
    if planes.iter().any(|p| p.shape() != (rows, cols)) {
        return Err(Error::ShapeMismatch(
            "accumulator planes differ in shape".into(),
        ));
    }
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let v: i64 = planes
                .iter()
                .enumerate()
                .map(|(p, m)| i64::from(m[(r, c)]) << p)
                .sum();
            out[(r, c)] = narrow(v, r, c)?;
        }
    }
    Ok(out)
}

enum Stripe {
    Int(Vec<i32>),
    Real(Vec<f64>),
    Levels(Vec<u8>),
}

fn reducing_gemm(ops: &Operands<'_>, opts: &GemmOptions, out: &GemmOutput<'_>) -> Result<GemmRun> {
    let (rows, cols) = (ops.rows(), ops.cols());
    let (s, t) = (ops.left.len(), ops.right.len());
    if let GemmOutput::Epilogue(epi) = out {
        epi.validate(rows, cols)?;
    }
    let (stripes, counters) = ops.drive(opts, |rt, raw| {
        let r0 = rt * TILE_M;
        let r1 = (r0 + TILE_M).min(rows);
        let n = r1.saturating_sub(r0) * cols;
        let mut acc = Vec::with_capacity(n);
        for r in r0..r1 {
            for c in 0..cols {
                acc.push(narrow(reduce_element(raw, s, t, r - r0, c), r, c)?);
            }
        }
        let started = Instant::now();
        let stripe = match out {
            GemmOutput::Int32 => Stripe::Int(acc),
            GemmOutput::Epilogue(epi) => {
                let real = (r0..r1)
                    .flat_map(|r| (0..cols).map(move |c| (r, c)))
                    .zip(&acc)
                    .map(|((r, c), &v)| epi.real_value(r, c, v));
                match &epi.requantize {
                    None => Stripe::Real(real.collect()),
                    Some(rq) => {
                        Stripe::Levels(real.map(|v| rq.quant.quantize_scalar(v) as u8).collect())
                    }
                }
            }
        };
        Ok((stripe, started.elapsed()))
    })?;

    let mut epilogue_time = Duration::ZERO;
    let mut ints = Vec::new();
    let mut reals = Vec::new();
    let mut levels = Vec::new();
    for (stripe, elapsed) in stripes {
        epilogue_time += elapsed;
        match stripe {
            Stripe::Int(v) => ints.extend(v),
            Stripe::Real(v) => reals.extend(v),
            Stripe::Levels(v) => levels.extend(v),
        }
    }
    let started = Instant::now();
    let result = match out {
        GemmOutput::Int32 => GemmResult::Int32(Matrix::from_vec(rows, cols, ints)),
        GemmOutput::Epilogue(epi) => match &epi.requantize {
            None => GemmResult::Real(Matrix::from_vec(rows, cols, reals)),
            Some(rq) => {
                let qm = QuantMatrix::new_unchecked(
                    rq.quant.bits(),
                    Matrix::from_vec(rows, cols, levels),
                );
                GemmResult::BitPlanes(BitPlaneStack::from_quant(&qm, rq.layout))
            }
        },
    };
    epilogue_time += started.elapsed();
    Ok(GemmRun {
        result,
        counters,
        epilogue_time,
    })
}

/// Any-bitwidth GEMM: `sum_{i,j} (plane_i(X) plane_j(W)) << (i + j)`.
///
/// `x` must be column-wise and `w` row-wise. With `opts.jump` the zero-tile
/// maps of the planes of `x` are computed first and zero tiles skipped.
pub fn gemm_sbit_by_tbit(
    x: &BitPlaneStack,
    w: &BitPlaneStack,
    opts: &GemmOptions,
    out: &GemmOutput<'_>,
) -> Result<GemmRun> {
    let maps = if opts.jump && x.orientation() == Orientation::ColumnWise {
        Some(maps_for(x.planes())?)
    } else {
        None
    };
    let ops = Operands::new(x.planes(), maps.as_deref(), w.planes())?;
    reducing_gemm(&ops, opts, out)
}

/// Neighbor aggregation `A X` with shifted plane reduction and an optional
/// fused epilogue.
pub fn aggregate(
    a: &PackedBitMatrix,
    map: Option<&TileMap>,
    x: &BitPlaneStack,
    opts: &GemmOptions,
    out: &GemmOutput<'_>,
) -> Result<GemmRun> {
    let computed;
    let map = match map {
        Some(m) => Some(m),
        None if opts.jump => {
            computed = scan_zero_tiles(a)?;
            Some(&computed)
        }
        None => None,
    };
    let ops = Operands::new(
        std::slice::from_ref(a),
        map.map(std::slice::from_ref),
        x.planes(),
    )?;
    reducing_gemm(&ops, opts, out)
}
