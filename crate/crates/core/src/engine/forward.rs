use std::ops::AddAssign;
use std::time::{Duration, Instant};

use super::{LayerConfig, LayerOrder, ModelConfig, OutputMode};
use crate::bitgemm::{
    aggregate, gemm_sbit_by_tbit, scan_zero_tiles, Affine, Dequant, EpilogueSpec, GemmOptions,
    GemmOutput, GemmResult, OpCounters, Requantize, TileMap,
};
use crate::bitpack::{BitPlaneStack, Layout, Padding};
use crate::error::{Error, Result};
use crate::graph::SubgraphBatch;
use crate::matrix::Matrix;
use crate::quantizer::{quantize_matrix, QuantParams};

/// Left operand of `X W`.
const LEFT: Layout = Layout::column_wise(Padding::Pad8);
/// Right operand of `A X` and of `X W`.
const RIGHT: Layout = Layout::row_wise(Padding::Pad8);

/// Packed activations together with the range they were quantized with.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantEmbedding {
    pub stack: BitPlaneStack,
    pub quant: QuantParams,
}

impl QuantEmbedding {
    /// Real values of the quantization levels (lower bucket edges).
    pub fn dequantize(&self) -> Matrix<f64> {
        self.stack
            .to_val()
            .values()
            .map(|&q| self.quant.dequantize_scalar(u32::from(q)))
    }

    fn in_layout(&self, layout: Layout) -> QuantEmbedding {
        if self.stack.layout_matches(layout.orientation) {
            self.clone()
        } else {
            QuantEmbedding {
                stack: self.stack.repack(layout),
                quant: self.quant,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerValue {
    Planes(QuantEmbedding),
    Real(Matrix<f64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForwardStats {
    pub aggregate: OpCounters,
    pub update: OpCounters,
    /// Wall time of the `A X` kernels including their fused epilogues.
    pub aggregate_time: Duration,
    /// Wall time of the `X W` kernels including their fused epilogues.
    pub update_time: Duration,
    /// CPU time inside fused epilogues, summed over workers.
    pub epilogue_time: Duration,
}

impl AddAssign for ForwardStats {
    fn add_assign(&mut self, rhs: Self) {
        self.aggregate += rhs.aggregate;
        self.update += rhs.update;
        self.aggregate_time += rhs.aggregate_time;
        self.update_time += rhs.update_time;
        self.epilogue_time += rhs.epilogue_time;
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Matrix<f64>,
    pub stats: ForwardStats,
}

#[derive(Debug, Clone)]
struct PreparedWeight {
    stack: BitPlaneStack,
    col_sums: Vec<i64>,
}

/// A validated model whose weight bit planes are packed once and shared.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    config: ModelConfig,
    weights: Vec<PreparedWeight>,
}

impl PreparedModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let weights = config
            .layers
            .iter()
            .map(|l| {
                let stack =
                    BitPlaneStack::from_quant(&quantize_matrix(&l.weight, &l.weight_quant)?, RIGHT);
                let col_sums = stack.line_sums();
                Ok(PreparedWeight { stack, col_sums })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weight_stack(&self, layer: usize) -> &BitPlaneStack {
        &self.weights[layer].stack
    }
}

/// Per-batch data reused by every layer: the adjacency zero-tile map and
/// the node degrees.
#[derive(Debug, Clone)]
pub struct BatchContext<'a> {
    batch: &'a SubgraphBatch,
    map: TileMap,
    degrees: Vec<i64>,
}

impl<'a> BatchContext<'a> {
    pub fn new(batch: &'a SubgraphBatch) -> Result<Self> {
        Ok(Self {
            batch,
            map: scan_zero_tiles(batch.adjacency())?,
            degrees: Dequant::adjacency_degrees(batch.adjacency()),
        })
    }

    pub fn batch(&self) -> &SubgraphBatch {
        self.batch
    }

    pub fn tile_map(&self) -> &TileMap {
        &self.map
    }

    /// The batch features as first-layer input.
    pub fn input(&self) -> Result<QuantEmbedding> {
        let stack = self
            .batch
            .features()
            .ok_or_else(|| Error::InvalidParams("batch carries no features".into()))?;
        Ok(QuantEmbedding {
            stack: stack.clone(),
            quant: *self.batch.x_quant(),
        })
    }

    fn aggregate(
        &self,
        x: &BitPlaneStack,
        epi: &EpilogueSpec,
        opts: &GemmOptions,
        stats: &mut ForwardStats,
    ) -> Result<GemmResult> {
        let started = Instant::now();
        let run = aggregate(
            self.batch.adjacency(),
            Some(&self.map),
            x,
            opts,
            &GemmOutput::Epilogue(epi),
        )?;
        stats.aggregate_time += started.elapsed();
        stats.aggregate += run.counters;
        stats.epilogue_time += run.epilogue_time;
        Ok(run.result)
    }
}

fn update(
    x: &BitPlaneStack,
    w: &BitPlaneStack,
    epi: &EpilogueSpec,
    opts: &GemmOptions,
    stats: &mut ForwardStats,
) -> Result<GemmResult> {
    let started = Instant::now();
    let run = gemm_sbit_by_tbit(x, w, opts, &GemmOutput::Epilogue(epi))?;
    stats.update_time += started.elapsed();
    stats.update += run.counters;
    stats.epilogue_time += run.epilogue_time;
    Ok(run.result)
}

fn input_layout(order: LayerOrder) -> Layout {
    match order {
        LayerOrder::AggregateThenUpdate => RIGHT,
        LayerOrder::UpdateThenAggregate => LEFT,
    }
}

fn requantize_to(quant: QuantParams, layout: Layout) -> Option<Requantize> {
    Some(Requantize { quant, layout })
}

/// Epilogue closing a layer: dequant, bias, batch norm, activation and,
/// for hidden layers, requantization into the next layer's input layout.
fn closing_epilogue(layer: &LayerConfig, dequant: Dequant, next: Layout) -> EpilogueSpec {
    EpilogueSpec {
        dequant: Some(dequant),
        bias: layer.bias.clone(),
        batch_norm: layer.batch_norm.clone(),
        activation: layer.activation,
        requantize: match layer.output {
            OutputMode::BitPlanes(q) => requantize_to(q, next),
            OutputMode::FullPrecision => None,
        },
    }
}

fn expect_planes(r: GemmResult) -> BitPlaneStack {
    r.into_planes()
        .expect("requantizing epilogue yields planes")
}

fn finish(layer: &LayerConfig, r: GemmResult) -> LayerValue {
    match (layer.output, r) {
        (OutputMode::BitPlanes(quant), GemmResult::BitPlanes(stack)) => {
            LayerValue::Planes(QuantEmbedding { stack, quant })
        }
        (OutputMode::FullPrecision, GemmResult::Real(m)) => LayerValue::Real(m),
        _ => unreachable!("epilogue output matches the layer's output mode"),
    }
}

/// Runs layer `index` of `model` on `input`. Hidden outputs are packed in
/// the layout the following layer consumes.
pub fn layer_forward(
    ctx: &BatchContext<'_>,
    model: &PreparedModel,
    index: usize,
    input: &QuantEmbedding,
    opts: &GemmOptions,
    stats: &mut ForwardStats,
) -> Result<LayerValue> {
    let layers = &model.config.layers;
    let layer = layers
        .get(index)
        .ok_or_else(|| Error::InvalidParams(format!("model has no layer {index}")))?;
    let w = &model.weights[index];
    let n = ctx.batch.total_nodes();
    if input.stack.logical_rows() != n || input.stack.logical_cols() != layer.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "layer {index} expects {n}x{} input, got {}x{}",
            layer.in_dim(),
            input.stack.logical_rows(),
            input.stack.logical_cols()
        )));
    }
    let next = input_layout(layers.get(index + 1).map_or(layer.order, |l| l.order));
    let x = input.in_layout(input_layout(layer.order));

    let out = match layer.order {
        LayerOrder::AggregateThenUpdate => {
            let epi = EpilogueSpec {
                dequant: Some(Dequant::for_adjacency(
                    ctx.degrees.clone(),
                    &x.stack,
                    x.quant.into(),
                )),
                requantize: requantize_to(layer.mid_quant, LEFT),
                ..EpilogueSpec::default()
            };
            let y = expect_planes(ctx.aggregate(&x.stack, &epi, opts, stats)?);
            let dequant = Dequant {
                left: layer.mid_quant.into(),
                right: layer.weight_quant.into(),
                inner_dim: layer.in_dim(),
                left_row_sums: y.line_sums(),
                right_col_sums: w.col_sums.clone(),
            };
            update(
                &y,
                &w.stack,
                &closing_epilogue(layer, dequant, next),
                opts,
                stats,
            )?
        }
        LayerOrder::UpdateThenAggregate => {
            let epi = EpilogueSpec {
                dequant: Some(Dequant {
                    left: x.quant.into(),
                    right: layer.weight_quant.into(),
                    inner_dim: layer.in_dim(),
                    left_row_sums: x.stack.line_sums(),
                    right_col_sums: w.col_sums.clone(),
                }),
                requantize: requantize_to(layer.mid_quant, RIGHT),
                ..EpilogueSpec::default()
            };
            let z = expect_planes(update(&x.stack, &w.stack, &epi, opts, stats)?);
            let dequant =
                Dequant::for_adjacency(ctx.degrees.clone(), &z, Affine::from(layer.mid_quant));
            ctx.aggregate(&z, &closing_epilogue(layer, dequant, next), opts, stats)?
        }
    };
    Ok(finish(layer, out))
}

/// Chains every layer; hidden activations stay packed throughout.
pub fn model_forward(
    ctx: &BatchContext<'_>,
    model: &PreparedModel,
    opts: &GemmOptions,
) -> Result<ForwardOutput> {
    let mut stats = ForwardStats::default();
    let mut x = ctx.input()?;
    for index in 0..model.config.layers.len() {
        match layer_forward(ctx, model, index, &x, opts, &mut stats)? {
            LayerValue::Planes(next) => x = next,
            LayerValue::Real(logits) => return Ok(ForwardOutput { logits, stats }),
        }
    }
    unreachable!("validated models end in a full-precision layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitgemm::Activation;
    use crate::bitpack::Orientation;
    use crate::engine::{ModelKind, ModelShape};
    use crate::graph::{build_batch, Graph, PartitionAssignment};

    fn isolated_batch(
        features: Matrix<f64>,
        x_quant: QuantParams,
        self_loops: bool,
    ) -> SubgraphBatch {
        let n = features.rows();
        let g = Graph::new(n, []).unwrap().with_features(features).unwrap();
        let a = PartitionAssignment::new(1, vec![0; n]).unwrap();
        build_batch(&g, &a, &[0], &x_quant, self_loops).unwrap()
    }

    #[test]
    fn identity_layer_reproduces_input_levels() {
        let xq = QuantParams::new(0.0, 1.0, 4).unwrap();
        let f = Matrix::from_fn(20, 6, |r, c| ((r * 7 + c * 3) % 16) as f64 / 16.0 + 0.01);
        let batch = isolated_batch(f, xq, true);
        let eye = Matrix::from_fn(6, 6, |r, c| f64::from(u8::from(r == c)));
        let mut cfg =
            ModelConfig::from_weights(ModelKind::ClusterGcn, vec![eye.clone(), eye], 4, 1).unwrap();
        let wq = QuantParams::new(0.0, 2.0, 1).unwrap();
        for l in &mut cfg.layers {
            l.weight_quant = wq;
            l.mid_quant = xq;
            l.activation = Activation::None;
        }
        cfg.layers[0].output = OutputMode::BitPlanes(xq);
        let model = PreparedModel::new(cfg).unwrap();
        let ctx = BatchContext::new(&batch).unwrap();
        let input = ctx.input().unwrap();
        let mut stats = ForwardStats::default();
        let LayerValue::Planes(out) =
            layer_forward(&ctx, &model, 0, &input, &GemmOptions::default(), &mut stats).unwrap()
        else {
            panic!("hidden layer must emit planes");
        };
        assert_eq!(out.stack.to_val(), input.stack.to_val());
        assert_eq!(out.quant, xq);
    }

    #[test]
    fn zero_features_give_zero_pre_bias_output() {
        let xq = QuantParams::new(0.0, 1.0, 3).unwrap();
        let batch = isolated_batch(Matrix::zeros(9, 4), xq, true);
        let shape = ModelShape {
            in_dim: 4,
            hidden: 5,
            classes: 3,
            layers: 1,
        };
        for kind in [ModelKind::ClusterGcn, ModelKind::BatchedGin] {
            let mut cfg = ModelConfig::preset(kind, shape, 3, 3, 4).unwrap();
            cfg.layers[0].mid_quant = xq;
            let model = PreparedModel::new(cfg).unwrap();
            let ctx = BatchContext::new(&batch).unwrap();
            let out = model_forward(&ctx, &model, &GemmOptions::default()).unwrap();
            assert!(out.logits.as_slice().iter().all(|&v| v == 0.0), "{kind}");
        }
    }

    #[test]
    fn options_do_not_change_logits() {
        let xq = QuantParams::new(0.0, 1.0, 2).unwrap();
        let g = crate::graph::SyntheticGraph {
            nodes: 300,
            clusters: 3,
            intra_degree: 5.0,
            inter_degree: 1.0,
            feature_dim: 12,
        }
        .generate(8)
        .unwrap();
        let a = crate::graph::partition(&g, 3, 0).unwrap();
        let batch = build_batch(&g, &a, &[0, 1, 2], &xq, true).unwrap();
        let shape = ModelShape {
            in_dim: 12,
            hidden: 16,
            classes: 4,
            layers: 3,
        };
        for kind in [ModelKind::ClusterGcn, ModelKind::BatchedGin] {
            let model =
                PreparedModel::new(ModelConfig::preset(kind, shape, 2, 3, 1).unwrap()).unwrap();
            let ctx = BatchContext::new(&batch).unwrap();
            let outs: Vec<_> = GemmOptions::all()
                .iter()
                .map(|o| model_forward(&ctx, &model, o).unwrap())
                .collect();
            for o in &outs[1..] {
                assert_eq!(o.logits, outs[0].logits);
            }
            let no_jump = &outs[1].stats.aggregate;
            let jump = &outs[3].stats.aggregate;
            assert!(jump.tile_mma_count < no_jump.tile_mma_count);
            assert_eq!(no_jump.tiles_skipped, 0);
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let xq = QuantParams::new(0.0, 1.0, 2).unwrap();
        let batch = isolated_batch(Matrix::zeros(4, 3), xq, true);
        let shape = ModelShape {
            in_dim: 5,
            hidden: 4,
            classes: 2,
            layers: 2,
        };
        let model =
            PreparedModel::new(ModelConfig::preset(ModelKind::ClusterGcn, shape, 2, 2, 0).unwrap())
                .unwrap();
        let ctx = BatchContext::new(&batch).unwrap();
        assert!(matches!(
            model_forward(&ctx, &model, &GemmOptions::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn stack_orientation_follows_next_layer() {
        let e = QuantEmbedding {
            stack: BitPlaneStack::from_quant(
                &quantize_matrix(
                    &Matrix::from_fn(3, 3, |r, c| (r + c) as f64),
                    &QuantParams::new(0.0, 5.0, 3).unwrap(),
                )
                .unwrap(),
                RIGHT,
            ),
            quant: QuantParams::new(0.0, 5.0, 3).unwrap(),
        };
        let moved = e.in_layout(LEFT);
        assert_eq!(moved.stack.orientation(), Orientation::ColumnWise);
        assert_eq!(moved.dequantize(), e.dequantize());
    }
}
