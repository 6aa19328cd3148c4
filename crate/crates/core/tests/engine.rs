mod common;

use bitgnn_core::bitgemm::{Activation, BatchNorm};
use bitgnn_core::engine::{
    layer_forward, model_forward, reference_forward_f32, BatchContext, FloatBatch, ForwardStats,
    LayerOrder, LayerValue, ModelConfig, ModelKind, ModelShape, OutputMode, PreparedModel,
};
use bitgnn_core::graph::{batch_schedule, build_batch, partition, SyntheticGraph};
use bitgnn_core::{GemmOptions, Graph, Matrix, PartitionAssignment, QuantParams, SubgraphBatch};
use common::{emulate_model, quantize, rng};
use rand::Rng;

fn clustered(nodes: usize, dim: usize, seed: u64) -> Graph {
    SyntheticGraph {
        nodes,
        clusters: (nodes / 60).max(1),
        intra_degree: 6.0,
        inter_degree: 1.0,
        feature_dim: dim,
    }
    .generate(seed)
    .unwrap()
}

fn single_batch(g: &Graph, parts: usize, xq: &QuantParams, seed: u64) -> SubgraphBatch {
    let a = partition(g, parts, seed).unwrap();
    build_batch(g, &a, &(0..parts).collect::<Vec<_>>(), xq, true).unwrap()
}

fn emulate(batch: &SubgraphBatch, model: &ModelConfig) -> Matrix<f64> {
    let adj = batch.adjacency().unpack();
    let x = batch.features().unwrap().to_val().into_values();
    emulate_model(&adj, &x, batch.x_quant(), model)
}

fn run(batch: &SubgraphBatch, model: &ModelConfig, opts: &GemmOptions) -> Matrix<f64> {
    let prepared = PreparedModel::new(model.clone()).unwrap();
    let ctx = BatchContext::new(batch).unwrap();
    model_forward(&ctx, &prepared, opts).unwrap().logits
}

fn calibrated(
    kind: ModelKind,
    shape: ModelShape,
    bits: (u8, u8),
    batch: &SubgraphBatch,
    g: &Graph,
    seed: u64,
) -> ModelConfig {
    let mut m = ModelConfig::preset(kind, shape, bits.0, bits.1, seed).unwrap();
    m.calibrate(&FloatBatch::from_batch(batch, g).unwrap())
        .unwrap();
    m
}

#[test]
fn random_layers_match_emulation_in_both_orders() {
    let mut r = rng(40);
    for case in 0..16u64 {
        let (s, t) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let dim = r.gen_range(1..40);
        let g = clustered(r.gen_range(20..400), dim, case);
        let xq = QuantParams::new(0.0, 1.0, s).unwrap();
        let batch = single_batch(&g, 3, &xq, case);
        let kind = if case % 2 == 0 {
            ModelKind::ClusterGcn
        } else {
            ModelKind::BatchedGin
        };
        let shape = ModelShape {
            in_dim: dim,
            hidden: r.gen_range(1..70),
            classes: r.gen_range(1..12),
            layers: r.gen_range(1..4),
        };
        let mut m = calibrated(kind, shape, (s, t), &batch, &g, case);
        for (l, layer) in m.layers.iter_mut().enumerate() {
            let d = layer.out_dim();
            if (case + l as u64).is_multiple_of(3) {
                layer.bias = Some((0..d).map(|_| r.gen_range(-0.5..0.5)).collect());
            }
            if (case + l as u64) % 4 == 1 {
                layer.batch_norm = Some(BatchNorm {
                    mean: (0..d).map(|_| r.gen_range(-0.2..0.2)).collect(),
                    var: (0..d).map(|_| r.gen_range(0.5..2.0)).collect(),
                    gamma: (0..d).map(|_| r.gen_range(0.5..1.5)).collect(),
                    beta: (0..d).map(|_| r.gen_range(-0.1..0.1)).collect(),
                    eps: 1e-5,
                });
            }
            if case % 5 == 2 {
                layer.activation = Activation::Tanh;
            }
        }
        let want = emulate(&batch, &m);
        for opts in GemmOptions::all() {
            assert_eq!(
                run(&batch, &m, &opts),
                want,
                "case {case} s={s} t={t} {opts:?}"
            );
        }
    }
}

#[test]
fn gcn_preset_on_two_cliques() {
    let mut edges = Vec::new();
    for (lo, hi) in [(0, 6), (6, 12)] {
        for i in lo..hi {
            for j in lo..hi {
                if i != j {
                    edges.push((i, j));
                }
            }
        }
    }
    let f = Matrix::from_fn(12, 8, |r, c| ((r * 5 + c * 3) % 11) as f64 / 11.0);
    let g = Graph::new(12, edges).unwrap().with_features(f).unwrap();
    let xq = QuantParams::new(0.0, 1.0, 4).unwrap();
    let batch = single_batch(&g, 2, &xq, 0);
    let shape = ModelShape {
        in_dim: 8,
        hidden: 16,
        classes: 4,
        layers: 3,
    };
    let m = calibrated(ModelKind::ClusterGcn, shape, (4, 4), &batch, &g, 3);
    assert_eq!(
        run(&batch, &m, &GemmOptions::default()),
        emulate(&batch, &m)
    );
}

#[test]
fn isolated_node_applies_its_own_weight_chain() {
    // One node with a self-loop: A = [1], so every layer sees x W.
    let f = Matrix::from_vec(1, 2, vec![0.75, 0.25]);
    let g = Graph::new(1, []).unwrap().with_features(f).unwrap();
    let xq = QuantParams::new(0.0, 1.0, 2).unwrap();
    let batch = build_batch(
        &g,
        &PartitionAssignment::new(1, vec![0]).unwrap(),
        &[0],
        &xq,
        true,
    )
    .unwrap();
    let w1 = Matrix::from_vec(2, 2, vec![1.0, -1.0, 1.0, 1.0]);
    let w2 = Matrix::from_vec(2, 1, vec![1.0, 3.0]);
    let mut m = ModelConfig::from_weights(ModelKind::ClusterGcn, vec![w1, w2], 2, 1).unwrap();
    let q = QuantParams::new(0.0, 2.0, 2).unwrap();
    for l in &mut m.layers {
        l.mid_quant = q;
    }
    // Scale 2 at one bit: {-1, 1} and {1, 3} are represented exactly.
    m.layers[0].weight_quant = QuantParams::new(-1.0, 3.0, 1).unwrap();
    m.layers[1].weight_quant = QuantParams::new(1.0, 5.0, 1).unwrap();
    m.layers[0].output = OutputMode::BitPlanes(q);

    // Hand evaluation with scale 0.25 for x and 0.5 for the intermediates:
    // x -> levels (3, 1) -> x = (0.75, 0.25); aggregate -> same, requantized
    // at scale 0.5 -> (0.5, 0.0); times W1 -> (0.5, -0.5); relu -> (0.5, 0);
    // requantize -> (0.5, 0); aggregate -> (0.5, 0); times W2 -> 0.5.
    let logits = run(&batch, &m, &GemmOptions::default());
    assert_eq!(logits, Matrix::from_vec(1, 1, vec![0.5]));
    assert_eq!(logits, emulate(&batch, &m));
}

#[test]
fn one_layer_model_is_layer_forward() {
    let g = clustered(150, 9, 2);
    let xq = QuantParams::new(0.0, 1.0, 3).unwrap();
    let batch = single_batch(&g, 2, &xq, 2);
    let shape = ModelShape {
        in_dim: 9,
        hidden: 4,
        classes: 5,
        layers: 1,
    };
    for kind in [ModelKind::ClusterGcn, ModelKind::BatchedGin] {
        let m = calibrated(kind, shape, (3, 5), &batch, &g, 1);
        let prepared = PreparedModel::new(m.clone()).unwrap();
        let ctx = BatchContext::new(&batch).unwrap();
        let mut stats = ForwardStats::default();
        let LayerValue::Real(direct) = layer_forward(
            &ctx,
            &prepared,
            0,
            &ctx.input().unwrap(),
            &GemmOptions::default(),
            &mut stats,
        )
        .unwrap() else {
            panic!("single layer is full precision");
        };
        let out = model_forward(&ctx, &prepared, &GemmOptions::default()).unwrap();
        assert_eq!(out.logits, direct);
        assert_eq!(out.stats.aggregate, stats.aggregate);
    }
}

#[test]
fn zero_weight_model_is_zero_on_both_paths() {
    let g = clustered(100, 6, 5);
    let xq = QuantParams::new(0.0, 1.0, 4).unwrap();
    let batch = single_batch(&g, 2, &xq, 5);
    let mut m = ModelConfig::from_weights(
        ModelKind::ClusterGcn,
        vec![Matrix::zeros(6, 8), Matrix::zeros(8, 3)],
        4,
        4,
    )
    .unwrap();
    m.calibrate(&FloatBatch::from_batch(&batch, &g).unwrap())
        .unwrap();
    assert!(run(&batch, &m, &GemmOptions::default())
        .as_slice()
        .iter()
        .all(|&v| v == 0.0));
    let float = reference_forward_f32(&FloatBatch::from_batch(&batch, &g).unwrap(), &m).unwrap();
    assert!(float.as_slice().iter().all(|&v| v == 0.0));
}

/// Single aggregate-then-update layer without nonlinearity: the logit gap is
/// bounded by the propagated quantization steps.
#[test]
fn eight_bit_gap_is_within_the_propagated_bound() {
    for seed in 0..5 {
        let g = clustered(300, 16, seed);
        let xq = QuantParams::new(0.0, 1.0, 8).unwrap();
        let batch = single_batch(&g, 4, &xq, seed);
        let shape = ModelShape {
            in_dim: 16,
            hidden: 1,
            classes: 6,
            layers: 1,
        };
        let m = calibrated(ModelKind::ClusterGcn, shape, (8, 8), &batch, &g, seed);
        let fb = FloatBatch::from_batch(&batch, &g).unwrap();
        let float = reference_forward_f32(&fb, &m).unwrap();
        let quant = run(&batch, &m, &GemmOptions::default());

        let layer = &m.layers[0];
        assert_eq!(layer.order, LayerOrder::AggregateThenUpdate);
        let (sx, smid, sw) = (
            xq.scale(),
            layer.mid_quant.scale(),
            layer.weight_quant.scale(),
        );
        let w_hat = layer.weight.map(|&v| {
            layer
                .weight_quant
                .dequantize_scalar(u32::from(quantize(v, &layer.weight_quant)))
        });
        for i in 0..fb.features.rows() {
            let deg = fb.neighbors[i].len() as f64;
            let y: Vec<f64> = (0..16)
                .map(|k| fb.neighbors[i].iter().map(|&u| fb.features[(u, k)]).sum())
                .collect();
            let ey = deg * sx + smid;
            for j in 0..6 {
                let bound: f64 = (0..16)
                    .map(|k| ey * w_hat[(k, j)].abs() + y[k].abs() * sw)
                    .sum::<f64>();
                let gap = (quant[(i, j)] - float[(i, j)]).abs();
                assert!(
                    gap <= bound * 1.0001 + 1e-4,
                    "seed {seed} ({i},{j}): gap {gap} > bound {bound}"
                );
            }
        }
    }
}

#[test]
fn multi_batch_schedule_matches_emulation_per_batch() {
    let g = clustered(900, 12, 7);
    let xq = QuantParams::new(0.0, 1.0, 3).unwrap();
    let a = partition(&g, 9, 7).unwrap();
    let shape = ModelShape {
        in_dim: 12,
        hidden: 64,
        classes: 7,
        layers: 3,
    };
    let first = build_batch(&g, &a, &[0, 1, 2], &xq, true).unwrap();
    let m = calibrated(ModelKind::BatchedGin, shape, (3, 3), &first, &g, 7);
    let prepared = PreparedModel::new(m.clone()).unwrap();
    for ids in batch_schedule(9, 3) {
        let b = build_batch(&g, &a, &ids, &xq, true).unwrap();
        let ctx = BatchContext::new(&b).unwrap();
        let out = model_forward(&ctx, &prepared, &GemmOptions::default()).unwrap();
        assert_eq!(out.logits, emulate(&b, &m));
    }
}
