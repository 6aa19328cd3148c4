//! Unquantized f32 forward pass, the yardstick for quantization error.

use super::{min_max, LayerConfig, LayerOrder, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, SubgraphBatch};
use crate::matrix::Matrix;

/// A batch in plain form: in-neighbor lists (self-loops included when the
/// adjacency has them) and real features.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatBatch {
    pub neighbors: Vec<Vec<usize>>,
    pub features: Matrix<f64>,
}

impl FloatBatch {
    pub fn new(neighbors: Vec<Vec<usize>>, features: Matrix<f64>) -> Result<Self> {
        let n = features.rows();
        if neighbors.len() != n || neighbors.iter().flatten().any(|&u| u >= n) {
            return Err(Error::ShapeMismatch(format!(
                "neighbor lists do not describe a graph over {n} feature rows"
            )));
        }
        Ok(Self {
            neighbors,
            features,
        })
    }

    /// Neighbor lists of `batch` with the unquantized features from `g`.
    pub fn from_batch(batch: &SubgraphBatch, g: &Graph) -> Result<Self> {
        let features = batch
            .float_features(g)
            .ok_or_else(|| Error::InvalidParams("graph has no features".into()))?;
        Self::new(batch.neighbor_lists(), features)
    }
}

pub(crate) struct LayerTrace {
    pub mid: (f64, f64),
    pub out: (f64, f64),
}

fn aggregate(neighbors: &[Vec<usize>], x: &Matrix<f32>) -> Matrix<f32> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for (v, ns) in neighbors.iter().enumerate() {
        let row = out.row_mut(v);
        for &u in ns {
            for (o, &xi) in row.iter_mut().zip(x.row(u)) {
                *o += xi;
            }
        }
    }
    out
}

fn matmul(x: &Matrix<f32>, w: &Matrix<f32>) -> Matrix<f32> {
    let mut out = Matrix::zeros(x.rows(), w.cols());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        for (k, &xv) in x.row(r).iter().enumerate() {
            for (o, &wv) in row.iter_mut().zip(w.row(k)) {
                *o += xv * wv;
            }
        }
    }
    out
}

fn epilogue(layer: &LayerConfig, m: &Matrix<f32>) -> Matrix<f32> {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| {
        let mut y = f64::from(m[(r, c)]);
        if let Some(b) = &layer.bias {
            y += b[c];
        }
        if let Some(bn) = &layer.batch_norm {
            y = bn.apply(c, y);
        }
        layer.activation.apply(y) as f32
    })
}

fn range(m: &Matrix<f32>) -> (f64, f64) {
    let (lo, hi) = min_max(
        &m.as_slice()
            .iter()
            .map(|&v| f64::from(v))
            .collect::<Vec<_>>(),
    );
    (lo, hi)
}

pub(crate) fn forward_traced(
    batch: &FloatBatch,
    model: &ModelConfig,
) -> Result<(Matrix<f64>, Vec<LayerTrace>)> {
    model.validate()?;
    if batch.features.cols() != model.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, model expects {}",
            batch.features.cols(),
            model.in_dim()
        )));
    }
    let mut x = batch.features.map(|&v| v as f32);
    let mut trace = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let w = layer.weight.map(|&v| v as f32);
        let (mid, pre) = match layer.order {
            LayerOrder::AggregateThenUpdate => {
                let y = aggregate(&batch.neighbors, &x);
                (range(&y), matmul(&y, &w))
            }
            LayerOrder::UpdateThenAggregate => {
                let y = matmul(&x, &w);
                (range(&y), aggregate(&batch.neighbors, &y))
            }
        };
        x = epilogue(layer, &pre);
        trace.push(LayerTrace {
            mid,
            out: range(&x),
        });
    }
    Ok((x.map(|&v| f64::from(v)), trace))
}

/// Float logits of `model` on `batch`, ignoring every quantization setting.
pub fn reference_forward_f32(batch: &FloatBatch, model: &ModelConfig) -> Result<Matrix<f64>> {
    forward_traced(batch, model).map(|(logits, _)| logits)
}
