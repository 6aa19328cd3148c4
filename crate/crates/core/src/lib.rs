//! Bit-serial quantized GNN inference.
//!
//! Real tensors are quantized to q-bit levels, split into 1-bit planes and
//! packed into 32-bit words. Every matrix product is composed from a
//! software 8 x 128 x 8 AND + popcount tile primitive and recombined with
//! shifts. On top of that sit graph partitioning, block-diagonal subgraph
//! batching and a GCN/GIN forward pass.

pub mod bitgemm;
pub mod bitpack;
pub mod engine;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod quantizer;

pub use bitgemm::{AccumulatorMatrix, GemmOptions, OpCounters, Reuse, TileMap};
pub use bitpack::{BitPlaneStack, Layout, Orientation, PackedBitMatrix, Padding};
pub use engine::{ModelConfig, ModelKind, PreparedModel};
pub use error::{Error, Result};
pub use graph::{Graph, PartitionAssignment, SubgraphBatch};
pub use matrix::Matrix;
pub use quantizer::{QuantMatrix, QuantParams};
