use std::collections::HashMap;

use super::{Graph, PartitionAssignment};
use crate::bitpack::{BitPlaneStack, Layout, Orientation, PackedBitMatrix, Padding};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::{quantize_matrix, QuantParams};

/// Adjacency layout: rows padded to 8, columns (the reduction side) to 128.
pub const ADJACENCY_LAYOUT: Layout = Layout::column_wise(Padding::Pad8);
/// Feature layout: the right operand of `A X`, feature columns padded to 8.
pub const FEATURE_LAYOUT: Layout = Layout::row_wise(Padding::Pad8);

/// A block-diagonal batch of subgraphs with a 1-bit adjacency and
/// quantized node features.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphBatch {
    node_ids: Vec<u32>,
    boundaries: Vec<usize>,
    adjacency: PackedBitMatrix,
    features: Option<BitPlaneStack>,
    x_quant: QuantParams,
}

impl SubgraphBatch {
    /// Assembles a batch from its parts, checking that the adjacency is
    /// square over the batch nodes and block-diagonal.
    pub fn from_parts(
        node_ids: Vec<u32>,
        boundaries: Vec<usize>,
        adjacency: PackedBitMatrix,
        features: Option<BitPlaneStack>,
        x_quant: QuantParams,
    ) -> Result<Self> {
        let n = node_ids.len();
        if boundaries.first() != Some(&0)
            || boundaries.last() != Some(&n)
            || boundaries.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Structure(
                "subgraph boundaries must rise from 0 to the node count".into(),
            ));
        }
        if adjacency.orientation() != Orientation::ColumnWise
            || adjacency.logical_rows() != n
            || adjacency.logical_cols() != n
        {
            return Err(Error::Structure(format!(
                "adjacency must be a column-wise {n}x{n} matrix"
            )));
        }
        if let Some(f) = &features {
            if f.orientation() != Orientation::RowWise
                || f.logical_rows() != n
                || f.padded_rows() != adjacency.padded_cols()
            {
                return Err(Error::Structure(
                    "features must be row-wise with one row per batch node".into(),
                ));
            }
            if f.bits() != x_quant.bits() {
                return Err(Error::Structure(format!(
                    "features carry {} bits, quantization declares {}",
                    f.bits(),
                    x_quant.bits()
                )));
            }
        }
        let batch = Self {
            node_ids,
            boundaries,
            adjacency,
            features,
            x_quant,
        };
        batch.check_block_diagonal()?;
        Ok(batch)
    }

    pub fn node_ids(&self) -> &[u32] {
        &self.node_ids
    }

    /// Subgraph offsets into `node_ids`, `num_subgraphs + 1` entries.
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_subgraphs(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn total_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn adjacency(&self) -> &PackedBitMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> Option<&BitPlaneStack> {
        self.features.as_ref()
    }

    pub fn x_quant(&self) -> &QuantParams {
        &self.x_quant
    }

    pub fn feature_dim(&self) -> usize {
        self.features
            .as_ref()
            .map_or(0, BitPlaneStack::logical_cols)
    }

    /// Subgraph index of every batch-local node.
    fn block_of(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_nodes());
        for (b, w) in self.boundaries.windows(2).enumerate() {
            out.extend(std::iter::repeat_n(b, w[1] - w[0]));
        }
        out
    }

    /// Fails if any edge connects two different subgraphs.
    pub fn check_block_diagonal(&self) -> Result<()> {
        let block = self.block_of();
        for r in 0..self.total_nodes() {
            let (lo, hi) = (self.boundaries[block[r]], self.boundaries[block[r] + 1]);
            for (w, &word) in self.adjacency.line(r).iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let c = w * 32 + bits.trailing_zeros() as usize;
                    if c < lo || c >= hi {
                        return Err(Error::Structure(format!(
                            "edge ({r}, {c}) crosses subgraph boundary"
                        )));
                    }
                    bits &= bits - 1;
                }
            }
        }
        Ok(())
    }

    /// In-neighbors of every batch node (columns set in its adjacency row).
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.total_nodes())
            .map(|r| {
                let mut ns = Vec::new();
                for (w, &word) in self.adjacency.line(r).iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        ns.push(w * 32 + bits.trailing_zeros() as usize);
                        bits &= bits - 1;
                    }
                }
                ns
            })
            .collect()
    }

    /// Gathers the unquantized features of the batch nodes from `g`.
    pub fn float_features(&self, g: &Graph) -> Option<Matrix<f64>> {
        let f = g.features()?;
        Some(Matrix::from_fn(self.total_nodes(), f.cols(), |r, c| {
            f[(self.node_ids[r] as usize, c)]
        }))
    }

    /// Bytes of a dense float32 encoding of the adjacency plus features.
    pub fn float32_dense_bytes(&self) -> usize {
        let n = self.total_nodes();
        4 * (n * n + n * self.feature_dim())
    }
}

/// Induced block-diagonal batch over `part_ids`. Edge `(src, dst)` sets
/// `A[dst][src]`, so `A X` sums in-neighbor features; edges between
/// different parts are dropped.
pub fn build_batch(
    g: &Graph,
    assign: &PartitionAssignment,
    part_ids: &[usize],
    x_quant: &QuantParams,
    self_loops: bool,
) -> Result<SubgraphBatch> {
    if part_ids.is_empty() {
        return Err(Error::InvalidParams("batch has no subgraphs".into()));
    }
    if assign.num_nodes() != g.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "assignment covers {} nodes, graph has {}",
            assign.num_nodes(),
            g.num_nodes()
        )));
    }
    let mut seen = vec![false; assign.num_parts()];
    for &p in part_ids {
        if p >= assign.num_parts() {
            return Err(Error::InvalidParams(format!("part {p} does not exist")));
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidParams(format!("part {p} listed twice")));
        }
    }

    let parts = assign.parts();
    let mut node_ids = Vec::new();
    let mut boundaries = vec![0];
    for &p in part_ids {
        node_ids.extend(parts[p].iter().map(|&v| v as u32));
        boundaries.push(node_ids.len());
    }
    let local: HashMap<u32, usize> = node_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let n = node_ids.len();

    let mut adjacency = PackedBitMatrix::zeros(n, n, ADJACENCY_LAYOUT);
    for &(s, d) in g.edges() {
        if let (Some(&ls), Some(&ld)) = (local.get(&s), local.get(&d)) {
            if assign.part_of(s as usize) == assign.part_of(d as usize) {
                adjacency.set(ld, ls);
            }
        }
    }
    if self_loops {
        for i in 0..n {
            adjacency.set(i, i);
        }
    }

    let features = match g.features() {
        Some(f) => {
            let gathered = Matrix::from_fn(n, f.cols(), |r, c| f[(node_ids[r] as usize, c)]);
            let qm = quantize_matrix(&gathered, x_quant)?;
            Some(BitPlaneStack::from_quant(&qm, FEATURE_LAYOUT))
        }
        None => None,
    };
    SubgraphBatch::from_parts(node_ids, boundaries, adjacency, features, *x_quant)
}

/// Consecutive groups of `batch_size` part ids covering all parts.
pub fn batch_schedule(num_parts: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let size = batch_size.max(1);
    (0..num_parts)
        .collect::<Vec<_>>()
        .chunks(size)
        .map(<[usize]>::to_vec)
        .collect()
}
