use std::path::PathBuf;

use bitgnn_core::graph::GraphFormat;
use bitgnn_core::{ModelKind, Reuse};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bitgnn",
    version,
    about = "Bit-serial quantized GNN inference harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a model over every batch of a graph and report timings and counters.
    Run(Box<RunArgs>),
    /// Write a clustered random graph.
    GenGraph(GenGraphArgs),
    /// Convert a graph between the text and binary formats.
    Convert(ConvertArgs),
    /// Partition a graph and write one part index per line.
    Partition(PartitionArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Binary,
}

impl From<FormatArg> for GraphFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => GraphFormat::EdgeListText,
            FormatArg::Binary => GraphFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Gcn,
    Gin,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gcn => ModelKind::ClusterGcn,
            ModelArg::Gin => ModelKind::BatchedGin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReuseArg {
    CrossBit,
    CrossTile,
}

impl From<ReuseArg> for Reuse {
    fn from(r: ReuseArg) -> Self {
        match r {
            ReuseArg::CrossBit => Reuse::CrossBit,
            ReuseArg::CrossTile => Reuse::CrossTile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    /// Name for the report; defaults to the graph file stem.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Requested partitions, capped at one per 16 nodes.
    #[arg(long, default_value_t = 1500)]
    pub num_parts: usize,
    /// Partitions per batch.
    #[arg(long, default_value_t = 20)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value = "gcn")]
    pub model: ModelArg,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Hidden width; 16 for gcn and 64 for gin when omitted.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Width of the seeded uniform [0, 1) node features.
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    /// Feature and activation bits.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits_x: u8,
    /// Weight bits; a weight file's own width takes precedence.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits_w: u8,
    /// Feature range; defaults to the observed feature span.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_min_x: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_max_x: Option<f64>,
    /// Weight range for every layer; defaults to each layer's span.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_min_w: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_max_w: Option<f64>,
    /// Range for intermediate and hidden activations; calibrated on the
    /// first batch when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_min_h: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_max_h: Option<f64>,
    /// Disable zero-tile jumping.
    #[arg(long)]
    pub no_jump: bool,
    #[arg(long, value_enum, default_value = "cross-tile")]
    pub reuse: ReuseArg,
    /// Timed repetitions of the forward pass over all batches.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub rounds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use this assignment instead of the built-in partitioner.
    #[arg(long)]
    pub partition_file: Option<PathBuf>,
    /// Trained weights; overrides --layers, --hidden and --classes.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    pub self_loops: Switch,
}

#[derive(Debug, Clone, Args)]
pub struct GenGraphArgs {
    #[arg(long)]
    pub nodes: usize,
    #[arg(long, default_value_t = 16)]
    pub clusters: usize,
    /// Expected undirected edges per node inside its cluster.
    #[arg(long, default_value_t = 10.0)]
    pub intra_degree: f64,
    /// Expected undirected edges per node to other clusters.
    #[arg(long, default_value_t = 1.0)]
    pub inter_degree: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub from: FormatArg,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub to: FormatArg,
}

#[derive(Debug, Clone, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    #[arg(long)]
    pub num_parts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
