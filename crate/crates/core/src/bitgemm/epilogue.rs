//! Per-output post-processing applied to integer GEMM accumulators:
//! affine dequantization, bias, batch norm, activation and optional
//! requantization into bit planes.

use crate::bitpack::{BitPlaneStack, Layout, PackedBitMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::{QuantMatrix, QuantParams};

use super::AccumulatorMatrix;

/// Maps a quantized level to a real value: `offset + scale * level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub offset: f64,
    pub scale: f64,
}

impl Affine {
    /// 0/1 adjacency entries are taken at face value.
    pub const BINARY: Affine = Affine {
        offset: 0.0,
        scale: 1.0,
    };
}

impl From<&QuantParams> for Affine {
    fn from(p: &QuantParams) -> Self {
        Affine {
            offset: p.alpha_min(),
            scale: p.scale(),
        }
    }
}

impl From<QuantParams> for Affine {
    fn from(p: QuantParams) -> Self {
        Affine::from(&p)
    }
}

/// Reconstructs the real product `(o_l + s_l L) (o_r + s_r R)` from the
/// integer product `L R`:
///
/// `y_ij = s_l s_r acc_ij + s_l o_r rowsum_i(L) + o_l s_r colsum_j(R) + K o_l o_r`
///
/// with `K` the logical inner dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dequant {
    pub left: Affine,
    pub right: Affine,
    pub inner_dim: usize,
    pub left_row_sums: Vec<i64>,
    pub right_col_sums: Vec<i64>,
}

impl Dequant {
    /// Row sums of a column-wise left stack and column sums of a row-wise right stack.
    pub fn from_operands(
        left: &BitPlaneStack,
        left_affine: Affine,
        right: &BitPlaneStack,
        right_affine: Affine,
    ) -> Self {
        Self {
            left: left_affine,
            right: right_affine,
            inner_dim: left.logical_cols(),
            left_row_sums: left.line_sums(),
            right_col_sums: right.line_sums(),
        }
    }

    /// Left operand is a 0/1 adjacency with precomputed degrees.
    pub fn for_adjacency(degrees: Vec<i64>, right: &BitPlaneStack, right_affine: Affine) -> Self {
        Self {
            left: Affine::BINARY,
            right: right_affine,
            inner_dim: right.logical_rows(),
            left_row_sums: degrees,
            right_col_sums: right.line_sums(),
        }
    }

    pub fn adjacency_degrees(a: &PackedBitMatrix) -> Vec<i64> {
        (0..a.logical_rows())
            .map(|r| a.line(r).iter().map(|w| i64::from(w.count_ones())).sum())
            .collect()
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize, acc: i32) -> f64 {
        let (l, r) = (self.left, self.right);
        let mut y = l.scale * r.scale * f64::from(acc);
        y += l.scale * r.offset * self.left_row_sums[row] as f64;
        y += l.offset * r.scale * self.right_col_sums[col] as f64;
        y += self.inner_dim as f64 * l.offset * r.offset;
        y
    }
}

/// `BN(x) = (x - mean_j) / sqrt(var_j + eps) * gamma_j + beta_j`
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            var: vec![1.0; cols],
            gamma: vec![1.0; cols],
            beta: vec![0.0; cols],
            eps: 0.0,
        }
    }

    pub fn cols(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if self.var.len() != n || self.gamma.len() != n || self.beta.len() != n {
            return Err(Error::InvalidParams(
                "batch-norm parameter vectors differ in length".into(),
            ));
        }
        if let Some(j) = self.var.iter().position(|v| !(v + self.eps > 0.0)) {
            return Err(Error::InvalidParams(format!(
                "batch-norm column {j}: var + eps = {} is not positive",
                self.var[j] + self.eps
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, col: usize, x: f64) -> f64 {
        (x - self.mean[col]) / (self.var[col] + self.eps).sqrt() * self.gamma[col] + self.beta[col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    None,
    Relu,
    /// Evaluated in f32.
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => f64::from((x as f32).tanh()),
        }
    }
}

/// Quantize the epilogue output and pack it into planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Requantize {
    pub quant: QuantParams,
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpilogueSpec {
    pub dequant: Option<Dequant>,
    pub bias: Option<Vec<f64>>,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Activation,
    pub requantize: Option<Requantize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpilogueOutput {
    Real(Matrix<f64>),
    BitPlanes(BitPlaneStack),
}

impl EpilogueOutput {
    pub fn into_real(self) -> Option<Matrix<f64>> {
        match self {
            EpilogueOutput::Real(m) => Some(m),
            EpilogueOutput::BitPlanes(_) => None,
        }
    }

    pub fn into_planes(self) -> Option<BitPlaneStack> {
        match self {
            EpilogueOutput::BitPlanes(s) => Some(s),
            EpilogueOutput::Real(_) => None,
        }
    }
}

impl EpilogueSpec {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if let Some(d) = &self.dequant {
            if d.left_row_sums.len() != rows || d.right_col_sums.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "dequant sums cover {}x{}, output is {rows}x{cols}",
                    d.left_row_sums.len(),
                    d.right_col_sums.len()
                )));
            }
        }
        if let Some(b) = &self.bias {
            if b.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "bias has {} entries, output has {cols} columns",
                    b.len()
                )));
            }
        }
        if let Some(bn) = &self.batch_norm {
            bn.validate()?;
            if bn.cols() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "batch-norm covers {} columns, output has {cols}",
                    bn.cols()
                )));
            }
        }
        Ok(())
    }

    /// Dequantize, add bias, batch-normalize, activate.
    #[inline]
    pub fn real_value(&self, row: usize, col: usize, acc: i32) -> f64 {
        let mut y = match &self.dequant {
            Some(d) => d.value(row, col, acc),
            None => f64::from(acc),
        };
        if let Some(b) = &self.bias {
            y += b[col];
        }
        if let Some(bn) = &self.batch_norm {
            y = bn.apply(col, y);
        }
        self.activation.apply(y)
    }
}

/// Unfused epilogue over a finished accumulator matrix.
pub fn apply_epilogue(acc: &AccumulatorMatrix, epi: &EpilogueSpec) -> Result<EpilogueOutput> {
    let (rows, cols) = acc.shape();
    epi.validate(rows, cols)?;
    let real = Matrix::from_fn(rows, cols, |r, c| epi.real_value(r, c, acc[(r, c)]));
    Ok(match &epi.requantize {
        None => EpilogueOutput::Real(real),
        Some(rq) => {
            let levels = real.map(|&v| rq.quant.quantize_scalar(v) as u8);
            let qm = QuantMatrix::new_unchecked(rq.quant.bits(), levels);
            EpilogueOutput::BitPlanes(BitPlaneStack::from_quant(&qm, rq.layout))
        }
    })
}
