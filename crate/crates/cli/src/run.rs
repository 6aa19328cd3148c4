use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use bitgnn_core::engine::{
    load_weights, model_forward, reference_forward_f32, BatchContext, FloatBatch, ForwardStats,
    ModelShape, OutputMode,
};
use bitgnn_core::graph::{
    batch_schedule, build_batch, import_partition, load_graph, pack_batch, partition, unpack_batch,
};
use bitgnn_core::{
    GemmOptions, Graph, Matrix, ModelConfig, ModelKind, PreparedModel, QuantParams, Reuse,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::{RunArgs, Switch};
use crate::report::RunReport;

/// Nodes per partition below which more parts stop paying off.
const MIN_PART_NODES: usize = 16;

/// `requested` capped so each part averages at least 16 nodes.
pub fn effective_parts(requested: usize, nodes: usize) -> usize {
    requested
        .clamp(1, (nodes / MIN_PART_NODES).max(1))
        .min(nodes.max(1))
}

/// Seeded uniform `[0, 1)` features.
pub fn synthetic_features(nodes: usize, dim: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(nodes, dim, |_, _| rng.gen::<f64>())
}

fn range_arg(name: &str, lo: Option<f64>, hi: Option<f64>) -> Result<Option<(f64, f64)>> {
    match (lo, hi) {
        (None, None) => Ok(None),
        (Some(lo), Some(hi)) => Ok(Some((lo, hi))),
        _ => bail!("--alpha-min-{name} and --alpha-max-{name} must be given together"),
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn reuse_name(r: Reuse) -> &'static str {
    match r {
        Reuse::CrossBit => "cross-bit",
        Reuse::CrossTile => "cross-tile",
    }
}

fn build_model(args: &RunArgs, kind: ModelKind, calibration: &FloatBatch) -> Result<ModelConfig> {
    let mut model = match &args.weights {
        Some(path) => {
            let entries = load_weights(path)
                .with_context(|| format!("loading weights {}", path.display()))?;
            ModelConfig::from_weight_entries(kind, entries, args.bits_x)?
        }
        None => ModelConfig::preset(
            kind,
            ModelShape {
                in_dim: args.feature_dim,
                hidden: args.hidden.unwrap_or_else(|| kind.default_hidden()),
                classes: args.classes,
                layers: args.layers,
            },
            args.bits_x,
            args.bits_w,
            args.seed,
        )?,
    };
    ensure!(
        model.in_dim() == args.feature_dim,
        "model takes {} input features but --feature-dim is {}",
        model.in_dim(),
        args.feature_dim
    );
    if let Some((lo, hi)) = range_arg("w", args.alpha_min_w, args.alpha_max_w)? {
        let q = QuantParams::new(lo, hi, model.w_bits)?;
        for l in &mut model.layers {
            l.weight_quant = q;
        }
    }
    match range_arg("h", args.alpha_min_h, args.alpha_max_h)? {
        Some((lo, hi)) => {
            let q = QuantParams::new(lo, hi, model.x_bits)?;
            for l in &mut model.layers {
                l.mid_quant = q;
                if let OutputMode::BitPlanes(_) = l.output {
                    l.output = OutputMode::BitPlanes(q);
                }
            }
        }
        None => model.calibrate(calibration)?,
    }
    Ok(model)
}

fn dataset_name(args: &RunArgs) -> String {
    args.dataset.clone().unwrap_or_else(|| {
        Path::new(&args.graph)
            .file_stem()
            .map_or_else(|| "graph".to_string(), |s| s.to_string_lossy().into_owned())
    })
}

/// Loads, partitions, packs and runs the configured model over every batch.
///
/// Each batch travels through its compound buffer before use, so the
/// engine always consumes unpacked bytes. Logits are checked to be
/// identical under a second kernel configuration.
pub fn run(args: &RunArgs) -> Result<RunReport> {
    ensure!(args.rounds >= 1, "--rounds must be at least 1");
    ensure!(args.feature_dim >= 1, "--feature-dim must be at least 1");
    let kind = ModelKind::from(args.model);
    let graph = load_graph(&args.graph, args.format.into())
        .with_context(|| format!("loading graph {}", args.graph.display()))?;
    let n = graph.num_nodes();
    ensure!(n > 0, "graph has no nodes");
    let graph: Graph = graph.with_features(synthetic_features(n, args.feature_dim, args.seed))?;

    let started = Instant::now();
    let assign = match &args.partition_file {
        Some(p) => import_partition(p, n, None)
            .with_context(|| format!("loading partition {}", p.display()))?,
        None => partition(&graph, effective_parts(args.num_parts, n), args.seed)?,
    };
    let partition_ms = ms(started.elapsed());

    let (lo, hi) = range_arg("x", args.alpha_min_x, args.alpha_max_x)?.unwrap_or((0.0, 1.0));
    let x_quant = QuantParams::new(lo, hi, args.bits_x)?;
    let sizes = assign.sizes();
    let started = Instant::now();
    let mut batches = Vec::new();
    let (mut compound_bytes, mut float32_bytes) = (0u64, 0u64);
    for ids in batch_schedule(assign.num_parts(), args.batch_size) {
        // Parts listed in a partition file may be empty.
        if ids.iter().all(|&p| sizes[p] == 0) {
            continue;
        }
        let b = build_batch(
            &graph,
            &assign,
            &ids,
            &x_quant,
            args.self_loops == Switch::On,
        )?;
        let buf = pack_batch(&b);
        compound_bytes += buf.len() as u64;
        float32_bytes += b.float32_dense_bytes() as u64;
        batches.push(unpack_batch(&buf)?);
    }
    let pack_ms = ms(started.elapsed());

    let floats = batches
        .iter()
        .map(|b| FloatBatch::from_batch(b, &graph))
        .collect::<bitgnn_core::Result<Vec<_>>>()?;
    let config = build_model(args, kind, &floats[0])?;
    let model = PreparedModel::new(config)?;
    let contexts = batches
        .iter()
        .map(BatchContext::new)
        .collect::<bitgnn_core::Result<Vec<_>>>()?;
    let opts = GemmOptions {
        jump: !args.no_jump,
        reuse: args.reuse.into(),
    };

    let mut total = ForwardStats::default();
    let mut per_round = ForwardStats::default();
    let mut wall = Duration::ZERO;
    let mut logits: Vec<Matrix<f64>> = Vec::with_capacity(contexts.len());
    for round in 0..args.rounds {
        let started = Instant::now();
        for ctx in &contexts {
            let out = model_forward(ctx, &model, &opts)?;
            total += out.stats;
            if round == 0 {
                per_round += out.stats;
                logits.push(out.logits);
            }
        }
        wall += started.elapsed();
    }

    let alt = if opts == GemmOptions::default() {
        GemmOptions {
            jump: false,
            reuse: Reuse::CrossBit,
        }
    } else {
        GemmOptions::default()
    };
    for (i, (ctx, expected)) in contexts.iter().zip(&logits).enumerate() {
        let out = model_forward(ctx, &model, &alt)?;
        ensure!(
            out.logits == *expected,
            "batch {i}: logits depend on kernel options"
        );
    }

    let (mut dev_sum, mut dev_max, mut dev_count) = (0.0f64, 0.0f64, 0usize);
    for (fb, q) in floats.iter().zip(&logits) {
        let f = reference_forward_f32(fb, model.config())?;
        for (a, b) in q.as_slice().iter().zip(f.as_slice()) {
            let d = (a - b).abs();
            dev_sum += d;
            dev_max = dev_max.max(d);
            dev_count += 1;
        }
    }

    let rounds = args.rounds as f64;
    let cfg = model.config();
    let (agg, upd) = (per_round.aggregate, per_round.update);
    Ok(RunReport {
        dataset: dataset_name(args),
        num_nodes: n,
        num_edges: graph.num_edges(),
        num_parts: assign.num_parts(),
        batch_size: args.batch_size.max(1),
        num_batches: batches.len(),
        model: kind.to_string(),
        layers: cfg.layers.len(),
        hidden: if cfg.layers.len() > 1 {
            cfg.layers[0].out_dim()
        } else {
            0
        },
        bits_x: cfg.x_bits,
        bits_w: cfg.w_bits,
        jump: opts.jump,
        reuse: reuse_name(opts.reuse).to_string(),
        rounds: args.rounds,
        seed: args.seed,
        partition_ms,
        pack_ms,
        aggregate_ms: ms(total.aggregate_time) / rounds,
        update_ms: ms(total.update_time) / rounds,
        epilogue_ms: ms(total.epilogue_time) / rounds,
        forward_ms: ms(wall) / rounds,
        agg_tile_mma: agg.tile_mma_count,
        agg_tile_fetch: agg.tile_fetch_count,
        agg_tiles_skipped: agg.tiles_skipped,
        agg_total_tiles: agg.total_tiles,
        agg_word_ops: agg.word_and_popcount_count,
        upd_tile_mma: upd.tile_mma_count,
        upd_tile_fetch: upd.tile_fetch_count,
        upd_tiles_skipped: upd.tiles_skipped,
        upd_total_tiles: upd.total_tiles,
        upd_word_ops: upd.word_and_popcount_count,
        skip_ratio: agg.skip_ratio(),
        compound_bytes,
        float32_bytes,
        logit_mean_abs_dev: if dev_count == 0 {
            0.0
        } else {
            dev_sum / dev_count as f64
        },
        logit_max_abs_dev: dev_max,
    })
}
