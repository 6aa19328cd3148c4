//! Test-side oracles. Nothing here calls into the bit-serial kernels.
#![allow(dead_code)]

use bitgnn_core::bitgemm::Activation;
use bitgnn_core::engine::{LayerConfig, LayerOrder, ModelConfig, OutputMode};
use bitgnn_core::{Matrix, QuantParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_levels(rng: &mut impl Rng, rows: usize, cols: usize, bits: u8) -> Matrix<u8> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0..(1u16 << bits)) as u8)
}

pub fn random_binary(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> Matrix<u8> {
    Matrix::from_fn(rows, cols, |_, _| u8::from(rng.gen_bool(density)))
}

pub fn int_gemm(a: &Matrix<u8>, b: &Matrix<u8>) -> Matrix<i64> {
    assert_eq!(a.cols(), b.rows());
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let av = i64::from(a[(i, k)]);
            if av == 0 {
                continue;
            }
            for j in 0..b.cols() {
                out[(i, j)] += av * i64::from(b[(k, j)]);
            }
        }
    }
    out
}

/// Number of all-zero 8 x 128 tiles over the padded extent of a 0/1 matrix.
pub fn dense_zero_tiles(a: &Matrix<u8>) -> usize {
    let row_tiles = a.rows().div_ceil(8);
    let col_tiles = a.cols().div_ceil(128).max(1);
    let mut zero = 0;
    for rt in 0..row_tiles {
        for ct in 0..col_tiles {
            let any = (rt * 8..(rt * 8 + 8).min(a.rows()))
                .any(|r| (ct * 128..(ct * 128 + 128).min(a.cols())).any(|c| a[(r, c)] != 0));
            zero += usize::from(!any);
        }
    }
    zero
}

/// `floor((v - lo) / ((hi - lo) / 2^bits))`, clamped to the level range.
pub fn quantize(v: f64, q: &QuantParams) -> u8 {
    let (lo, hi) = (q.alpha_min(), q.alpha_max());
    let max = (1u32 << q.bits()) - 1;
    if v.is_nan() || v <= lo {
        return 0;
    }
    let step = (hi - lo) / f64::from(1u32 << q.bits());
    let level = ((v - lo) / step).floor();
    if level >= f64::from(max) {
        max as u8
    } else {
        level as u8
    }
}

pub fn quantize_all(m: &Matrix<f64>, q: &QuantParams) -> Matrix<u8> {
    m.map(|&v| quantize(v, q))
}

fn row_sums(m: &Matrix<u8>) -> Vec<i64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().map(|&v| i64::from(v)).sum())
        .collect()
}

fn col_sums(m: &Matrix<u8>) -> Vec<i64> {
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| i64::from(m[(r, c)])).sum())
        .collect()
}

/// Real value of `L R` given affine level maps `o + s * q` on both sides.
#[allow(clippy::too_many_arguments)]
fn dequant(
    sl: f64,
    ol: f64,
    sr: f64,
    or: f64,
    k: usize,
    acc: i64,
    rowsum: i64,
    colsum: i64,
) -> f64 {
    let mut y = sl * sr * acc as f64;
    y += sl * or * rowsum as f64;
    y += ol * sr * colsum as f64;
    y += k as f64 * ol * or;
    y
}

/// Integer product of two level matrices mapped back to reals.
fn affine_product(
    l: &Matrix<u8>,
    (ol, sl): (f64, f64),
    r: &Matrix<u8>,
    (or, sr): (f64, f64),
) -> Matrix<f64> {
    let acc = int_gemm(l, r);
    let (rs, cs) = (row_sums(l), col_sums(r));
    Matrix::from_fn(acc.rows(), acc.cols(), |i, j| {
        let v = i32::try_from(acc[(i, j)]).expect("oracle product fits i32");
        dequant(sl, ol, sr, or, l.cols(), i64::from(v), rs[i], cs[j])
    })
}

fn affine(q: &QuantParams) -> (f64, f64) {
    (q.alpha_min(), q.scale())
}

fn finish_layer(layer: &LayerConfig, m: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| {
        let mut y = m[(r, c)];
        if let Some(b) = &layer.bias {
            y += b[c];
        }
        if let Some(bn) = &layer.batch_norm {
            y = (y - bn.mean[c]) / (bn.var[c] + bn.eps).sqrt() * bn.gamma[c] + bn.beta[c];
        }
        match layer.activation {
            Activation::None => y,
            Activation::Relu => y.max(0.0),
            Activation::Tanh => f64::from((y as f32).tanh()),
        }
    })
}

/// Straight scalar emulation of the quantized forward pass: quantize,
/// integer matmuls, elementwise epilogue, requantize.
pub fn emulate_model(
    adj: &Matrix<u8>,
    x_levels: &Matrix<u8>,
    x_quant: &QuantParams,
    model: &ModelConfig,
) -> Matrix<f64> {
    const BINARY: (f64, f64) = (0.0, 1.0);
    let mut x = x_levels.clone();
    let mut xq = *x_quant;
    for layer in &model.layers {
        let w = quantize_all(&layer.weight, &layer.weight_quant);
        let wa = affine(&layer.weight_quant);
        let mid = layer.mid_quant;
        let pre = match layer.order {
            LayerOrder::AggregateThenUpdate => {
                let y = quantize_all(&affine_product(adj, BINARY, &x, affine(&xq)), &mid);
                affine_product(&y, affine(&mid), &w, wa)
            }
            LayerOrder::UpdateThenAggregate => {
                let z = quantize_all(&affine_product(&x, affine(&xq), &w, wa), &mid);
                affine_product(adj, BINARY, &z, affine(&mid))
            }
        };
        let out = finish_layer(layer, &pre);
        match layer.output {
            OutputMode::FullPrecision => return out,
            OutputMode::BitPlanes(q) => {
                x = quantize_all(&out, &q);
                xq = q;
            }
        }
    }
    unreachable!("last layer is full precision")
}

pub fn mean_abs_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let n = a.as_slice().len().max(1);
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n as f64
}
