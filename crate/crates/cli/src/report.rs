use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// One row of the results CSV. Times are milliseconds per round (one
/// forward pass over every batch); counters are per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_parts: usize,
    pub batch_size: usize,
    pub num_batches: usize,
    pub model: String,
    pub layers: usize,
    pub hidden: usize,
    pub bits_x: u8,
    pub bits_w: u8,
    pub jump: bool,
    pub reuse: String,
    pub rounds: u64,
    pub seed: u64,
    pub partition_ms: f64,
    pub pack_ms: f64,
    pub aggregate_ms: f64,
    pub update_ms: f64,
    pub epilogue_ms: f64,
    pub forward_ms: f64,
    pub agg_tile_mma: u64,
    pub agg_tile_fetch: u64,
    pub agg_tiles_skipped: u64,
    pub agg_total_tiles: u64,
    pub agg_word_ops: u64,
    pub upd_tile_mma: u64,
    pub upd_tile_fetch: u64,
    pub upd_tiles_skipped: u64,
    pub upd_total_tiles: u64,
    pub upd_word_ops: u64,
    /// Skipped fraction of adjacency tiles.
    pub skip_ratio: f64,
    pub compound_bytes: u64,
    pub float32_bytes: u64,
    pub logit_mean_abs_dev: f64,
    pub logit_max_abs_dev: f64,
}

impl RunReport {
    pub fn compression_ratio(&self) -> f64 {
        if self.compound_bytes == 0 {
            0.0
        } else {
            self.float32_bytes as f64 / self.compound_bytes as f64
        }
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} nodes, {} edges, {} parts in {} batches",
            self.dataset, self.num_nodes, self.num_edges, self.num_parts, self.num_batches
        )?;
        writeln!(
            f,
            "model {} x{} hidden {}, {}-bit features, {}-bit weights, jump {}, reuse {}",
            self.model, self.layers, self.hidden, self.bits_x, self.bits_w, self.jump, self.reuse
        )?;
        writeln!(
            f,
            "partition {:.2} ms, pack {:.2} ms",
            self.partition_ms, self.pack_ms
        )?;
        writeln!(
            f,
            "per round over {} rounds: forward {:.3} ms (aggregate {:.3}, update {:.3}, epilogue cpu {:.3})",
            self.rounds, self.forward_ms, self.aggregate_ms, self.update_ms, self.epilogue_ms
        )?;
        writeln!(
            f,
            "aggregate tiles: {} mma, {} fetched, {}/{} skipped ({:.1}%), {} word ops",
            self.agg_tile_mma,
            self.agg_tile_fetch,
            self.agg_tiles_skipped,
            self.agg_total_tiles,
            100.0 * self.skip_ratio,
            self.agg_word_ops
        )?;
        writeln!(
            f,
            "update tiles: {} mma, {} fetched, {} word ops",
            self.upd_tile_mma, self.upd_tile_fetch, self.upd_word_ops
        )?;
        writeln!(
            f,
            "packed {} bytes vs {} float32 bytes ({:.1}x)",
            self.compound_bytes,
            self.float32_bytes,
            self.compression_ratio()
        )?;
        write!(
            f,
            "logit deviation from float reference: mean {:.4}, max {:.4}",
            self.logit_mean_abs_dev, self.logit_max_abs_dev
        )
    }
}

/// Writes a header and one row per report. Refuses an empty list without
/// touching `path`.
pub fn emit_csv(reports: &[RunReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if reports.is_empty() {
        bail!("no results to write to {}", path.display());
    }
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<RunReport>> {
    let path = path.as_ref();
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
