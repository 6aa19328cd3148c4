//! Quantized GCN/GIN forward passes over subgraph batches.
//!
//! A layer is an aggregation `A X` and an update `X W`. Both run on the
//! bit-serial kernels; the product of the first step is requantized to
//! `mid_quant` inside its epilogue and handed to the second step in packed
//! form. Hidden layers requantize their output as well, the last layer
//! returns real logits.

mod forward;
mod reference;
mod weights;

pub use forward::{
    layer_forward, model_forward, BatchContext, ForwardOutput, ForwardStats, LayerValue,
    PreparedModel, QuantEmbedding,
};
pub use reference::{reference_forward_f32, FloatBatch};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, WeightEntry, WEIGHT_MAGIC,
    WEIGHT_VERSION,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitgemm::{Activation, BatchNorm};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::QuantParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerOrder {
    /// `(A X) W`, cluster-GCN style.
    AggregateThenUpdate,
    /// `A (X W)`, the GIN preset.
    UpdateThenAggregate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputMode {
    /// Requantize and pack for the next layer.
    BitPlanes(QuantParams),
    FullPrecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    /// `in_dim x out_dim`.
    pub weight: Matrix<f64>,
    pub weight_quant: QuantParams,
    pub bias: Option<Vec<f64>>,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Activation,
    pub order: LayerOrder,
    /// Range for the intermediate product between the two steps.
    pub mid_quant: QuantParams,
    pub output: OutputMode,
}

impl LayerConfig {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    ClusterGcn,
    BatchedGin,
}

impl ModelKind {
    pub fn order(self) -> LayerOrder {
        match self {
            ModelKind::ClusterGcn => LayerOrder::AggregateThenUpdate,
            ModelKind::BatchedGin => LayerOrder::UpdateThenAggregate,
        }
    }

    /// Hidden width of the benchmark preset.
    pub fn default_hidden(self) -> usize {
        match self {
            ModelKind::ClusterGcn => 16,
            ModelKind::BatchedGin => 64,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::ClusterGcn => "gcn",
            ModelKind::BatchedGin => "gin",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" | "cluster-gcn" => Ok(ModelKind::ClusterGcn),
            "gin" | "batched-gin" => Ok(ModelKind::BatchedGin),
            other => Err(Error::InvalidParams(format!("unknown model '{other}'"))),
        }
    }
}

/// Layer sizes for [`ModelConfig::preset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub in_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layers: Vec<LayerConfig>,
    pub x_bits: u8,
    pub w_bits: u8,
}

/// Placeholder range for activations until [`ModelConfig::calibrate`] runs.
const DEFAULT_RANGE: (f64, f64) = (-1.0, 1.0);

impl ModelConfig {
    /// Seeded uniform weights in `+-sqrt(6 / (in + out))`, ReLU on hidden
    /// layers, no bias or batch norm.
    pub fn preset(
        kind: ModelKind,
        shape: ModelShape,
        x_bits: u8,
        w_bits: u8,
        seed: u64,
    ) -> Result<Self> {
        if shape.layers == 0 || shape.in_dim == 0 || shape.hidden == 0 || shape.classes == 0 {
            return Err(Error::InvalidParams(format!(
                "degenerate model shape {shape:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(shape.layers);
        for l in 0..shape.layers {
            let d_in = if l == 0 { shape.in_dim } else { shape.hidden };
            let d_out = if l + 1 == shape.layers {
                shape.classes
            } else {
                shape.hidden
            };
            let bound = (6.0 / (d_in + d_out) as f64).sqrt();
            weights.push(Matrix::from_fn(d_in, d_out, |_, _| {
                rng.gen_range(-bound..bound)
            }));
        }
        Self::from_weights(kind, weights, x_bits, w_bits)
    }

    /// Builds a model around given weights with quant ranges spanning each
    /// weight matrix.
    pub fn from_weights(
        kind: ModelKind,
        weights: Vec<Matrix<f64>>,
        x_bits: u8,
        w_bits: u8,
    ) -> Result<Self> {
        let n = weights.len();
        let placeholder = QuantParams::new(DEFAULT_RANGE.0, DEFAULT_RANGE.1, x_bits)?;
        let layers = weights
            .into_iter()
            .enumerate()
            .map(|(l, weight)| {
                let last = l + 1 == n;
                Ok(LayerConfig {
                    weight_quant: weight_range(&weight, w_bits)?,
                    weight,
                    bias: None,
                    batch_norm: None,
                    activation: if last {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                    order: kind.order(),
                    mid_quant: placeholder,
                    output: if last {
                        OutputMode::FullPrecision
                    } else {
                        OutputMode::BitPlanes(placeholder)
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            kind,
            layers,
            x_bits,
            w_bits,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, LayerConfig::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, LayerConfig::out_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::InvalidParams("model has no layers".into()));
        };
        if last.output != OutputMode::FullPrecision {
            return Err(Error::InvalidParams(
                "last layer must output full precision".into(),
            ));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let ctx = |msg: String| Error::InvalidParams(format!("layer {l}: {msg}"));
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(ctx("empty weight matrix".into()));
            }
            if let Some(next) = self.layers.get(l + 1) {
                if next.in_dim() != layer.out_dim() {
                    return Err(ctx(format!(
                        "output dim {} does not feed next layer's input dim {}",
                        layer.out_dim(),
                        next.in_dim()
                    )));
                }
                match layer.output {
                    OutputMode::BitPlanes(q) if q.bits() != self.x_bits => {
                        return Err(ctx(format!(
                            "output carries {} bits, model uses {}",
                            q.bits(),
                            self.x_bits
                        )));
                    }
                    OutputMode::BitPlanes(_) => {}
                    OutputMode::FullPrecision => {
                        return Err(ctx("only the last layer may output full precision".into()))
                    }
                }
            }
            if layer.weight_quant.bits() != self.w_bits {
                return Err(ctx(format!(
                    "weights carry {} bits, model uses {}",
                    layer.weight_quant.bits(),
                    self.w_bits
                )));
            }
            if layer.mid_quant.bits() != self.x_bits {
                return Err(ctx(format!(
                    "intermediate carries {} bits, model uses {}",
                    layer.mid_quant.bits(),
                    self.x_bits
                )));
            }
            if let Some(b) = &layer.bias {
                if b.len() != layer.out_dim() {
                    return Err(ctx(format!(
                        "bias has {} entries for {} outputs",
                        b.len(),
                        layer.out_dim()
                    )));
                }
            }
            if let Some(bn) = &layer.batch_norm {
                bn.validate()?;
                if bn.cols() != layer.out_dim() {
                    return Err(ctx(format!(
                        "batch norm covers {} of {} outputs",
                        bn.cols(),
                        layer.out_dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sets every intermediate and hidden-output range to the span observed
    /// on a float forward pass over `batch`.
    pub fn calibrate(&mut self, batch: &FloatBatch) -> Result<()> {
        let (_, trace) = reference::forward_traced(batch, self)?;
        for (layer, t) in self.layers.iter_mut().zip(trace) {
            layer.mid_quant = observed_range(t.mid, self.x_bits)?;
            if let OutputMode::BitPlanes(_) = layer.output {
                layer.output = OutputMode::BitPlanes(observed_range(t.out, self.x_bits)?);
            }
        }
        Ok(())
    }
}

/// `[min W, max W]`, or `[-1, 1]` for a constant matrix.
pub fn weight_range(w: &Matrix<f64>, bits: u8) -> Result<QuantParams> {
    let (lo, hi) = min_max(w.as_slice());
    observed_range((lo, hi), bits)
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn observed_range((lo, hi): (f64, f64), bits: u8) -> Result<QuantParams> {
    if lo.is_finite() && hi.is_finite() && hi > lo {
        QuantParams::new(lo, hi, bits)
    } else if lo.is_finite() && lo == hi {
        QuantParams::new(lo - 1.0, hi + 1.0, bits)
    } else {
        QuantParams::new(DEFAULT_RANGE.0, DEFAULT_RANGE.1, bits)
    }
}
