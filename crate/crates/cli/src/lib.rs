//! End-to-end runs of the quantized GNN engine: load a graph, partition it,
//! pack subgraph batches, time repeated forward passes and report counters,
//! timings and deviation from a float reference.

pub mod args;
pub mod report;
pub mod run;

pub use args::{Cli, Command, RunArgs};
pub use report::{emit_csv, read_csv, RunReport};
pub use run::run;
