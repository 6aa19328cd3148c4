//! Seeded operands shared by the benchmarks.

use bitgnn_core::quantizer::QuantMatrix;
use bitgnn_core::{BitPlaneStack, Layout, Matrix, PackedBitMatrix, Padding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n x n` block-diagonal adjacency with `blocks` dense-ish blocks.
pub fn block_adjacency(n: usize, blocks: usize, density: f64, seed: u64) -> PackedBitMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = PackedBitMatrix::zeros(n, n, Layout::column_wise(Padding::Pad8));
    let size = n.div_ceil(blocks.max(1));
    for r in 0..n {
        let start = r / size * size;
        for c in start..(start + size).min(n) {
            if r == c || rng.gen_bool(density) {
                a.set(r, c);
            }
        }
    }
    a
}

/// Uniform random `bits`-bit values packed in `layout`.
pub fn random_stack(
    rows: usize,
    cols: usize,
    bits: u8,
    layout: Layout,
    seed: u64,
) -> BitPlaneStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = 1u16 << bits;
    let values = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0..top) as u8);
    BitPlaneStack::from_quant(&QuantMatrix::new(bits, values).expect("values fit"), layout)
}
