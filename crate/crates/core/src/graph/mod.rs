//! Graph loading, partitioning, block-diagonal batching and the compound
//! transfer buffer.

mod batch;
mod compound;
mod partition;

pub use batch::{batch_schedule, build_batch, SubgraphBatch, ADJACENCY_LAYOUT, FEATURE_LAYOUT};
pub use compound::{pack_batch, unpack_batch, CompoundBuffer, COMPOUND_MAGIC, COMPOUND_VERSION};
pub use partition::{
    edge_cut, export_partition, import_partition, parse_partition, partition, PartitionAssignment,
    BALANCE_SLACK,
};

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitpack::Reader;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const GRAPH_MAGIC: [u8; 4] = *b"GRPH";
pub const GRAPH_VERSION: u16 = 1;

/// A directed graph with a deduplicated, sorted edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(u32, u32)>,
    features: Option<Matrix<f64>>,
}

impl Graph {
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if num_nodes > u32::MAX as usize {
            return Err(Error::InvalidParams(format!(
                "{num_nodes} nodes exceed u32 indexing"
            )));
        }
        let mut list = Vec::new();
        for (s, d) in edges {
            if s >= num_nodes || d >= num_nodes {
                return Err(Error::InvalidParams(format!(
                    "edge ({s}, {d}) out of range for {num_nodes} nodes"
                )));
            }
            list.push((s as u32, d as u32));
        }
        list.sort_unstable();
        list.dedup();
        Ok(Self {
            num_nodes,
            edges: list,
            features: None,
        })
    }

    /// Attaches a `num_nodes x dim` feature matrix.
    pub fn with_features(mut self, features: Matrix<f64>) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                self.num_nodes
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn features(&self) -> Option<&Matrix<f64>> {
        self.features.as_ref()
    }

    /// Symmetrized neighbor lists without self-loops, sorted.
    pub fn undirected_neighbors(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(s, d) in &self.edges {
            if s != d {
                adj[s as usize].push(d);
                adj[d as usize].push(s);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    EdgeListText,
    Binary,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "edge-list" | "edgelist" => Ok(GraphFormat::EdgeListText),
            "binary" | "bin" => Ok(GraphFormat::Binary),
            other => Err(Error::InvalidParams(format!(
                "unknown graph format '{other}'"
            ))),
        }
    }
}

pub fn load_graph(path: impl AsRef<Path>, format: GraphFormat) -> Result<Graph> {
    match format {
        GraphFormat::EdgeListText => parse_edge_list(&fs::read_to_string(path)?),
        GraphFormat::Binary => decode_graph(&fs::read(path)?),
    }
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>, format: GraphFormat) -> Result<()> {
    match format {
        GraphFormat::EdgeListText => fs::write(path, to_edge_list(g))?,
        GraphFormat::Binary => fs::write(path, encode_graph(g))?,
    }
    Ok(())
}

/// Parses `src dst` lines. An optional `# nodes N` line fixes the node
/// count; other `#` lines and blank lines are ignored.
pub fn parse_edge_list(text: &str) -> Result<Graph> {
    let mut declared: Option<usize> = None;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut toks = comment.split_whitespace();
            if toks.next() == Some("nodes") {
                let n = toks
                    .next()
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: "malformed '# nodes N' header".into(),
                    })?;
                declared = Some(n);
            }
            continue;
        }
        let mut toks = line.split_whitespace();
        let mut next = |what: &str| -> Result<usize> {
            let tok = toks.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("missing {what} index"),
            })?;
            tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid {what} index '{tok}'"),
            })
        };
        let (s, d) = (next("source")?, next("destination")?);
        if toks.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected exactly two indices".into(),
            });
        }
        if let Some(n) = declared {
            if s >= n || d >= n {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("edge ({s}, {d}) outside declared {n} nodes"),
                });
            }
        }
        edges.push((s, d));
    }
    let n = declared.unwrap_or_else(|| edges.iter().map(|&(s, d)| s.max(d) + 1).max().unwrap_or(0));
    Graph::new(n, edges)
}

pub fn to_edge_list(g: &Graph) -> String {
    let mut out = format!("# nodes {}\n", g.num_nodes);
    for &(s, d) in &g.edges {
        out.push_str(&format!("{s} {d}\n"));
    }
    out
}

/// `"GRPH" u16 version u32 num_nodes u64 num_edges (u32 src, u32 dst)*`
pub fn encode_graph(g: &Graph) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + g.edges.len() * 8);
    out.extend_from_slice(&GRAPH_MAGIC);
    out.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.num_nodes as u32).to_le_bytes());
    out.extend_from_slice(&(g.edges.len() as u64).to_le_bytes());
    for &(s, d) in &g.edges {
        out.extend_from_slice(&s.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn decode_graph(bytes: &[u8]) -> Result<Graph> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != GRAPH_MAGIC {
        return Err(Error::Format("bad graph magic".into()));
    }
    let version = r.u16()?;
    if version != GRAPH_VERSION {
        return Err(Error::Format(format!(
            "unsupported graph version {version}"
        )));
    }
    let n = r.u32()? as usize;
    let m = r.u64()? as usize;
    if r.remaining() != m.saturating_mul(8) {
        return Err(Error::Format(format!(
            "edge section holds {} bytes, expected {m} edges",
            r.remaining()
        )));
    }
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        edges.push((r.u32()? as usize, r.u32()? as usize));
    }
    Graph::new(n, edges)
}

/// Parameters for a clustered random graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticGraph {
    pub nodes: usize,
    pub clusters: usize,
    /// Expected undirected edges per node inside its cluster.
    pub intra_degree: f64,
    /// Expected undirected edges per node to other clusters.
    pub inter_degree: f64,
    pub feature_dim: usize,
}

impl SyntheticGraph {
    /// Symmetric stochastic block graph with uniform `[0, 1)` features.
    pub fn generate(&self, seed: u64) -> Result<Graph> {
        if self.clusters == 0 || self.clusters > self.nodes.max(1) {
            return Err(Error::InvalidParams(format!(
                "{} clusters for {} nodes",
                self.clusters, self.nodes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.nodes;
        let k = self.clusters;
        let cluster_of = |v: usize| v * k / n;
        let cluster_start = |c: usize| (c * n).div_ceil(k);
        let mut edges = Vec::new();
        for v in 0..n {
            let c = cluster_of(v);
            let lo = cluster_start(c);
            let size = cluster_start(c + 1) - lo;
            if size > 1 {
                let p = (self.intra_degree / 2.0 / (size - 1) as f64).min(1.0);
                let draws = sample_count(&mut rng, size - 1, p);
                for _ in 0..draws {
                    let u = lo + rng.gen_range(0..size);
                    if u != v {
                        edges.push((v, u));
                        edges.push((u, v));
                    }
                }
            }
            if n > size {
                let p = (self.inter_degree / 2.0 / (n - size) as f64).min(1.0);
                let draws = sample_count(&mut rng, n - size, p);
                for _ in 0..draws {
                    let u = rng.gen_range(0..n);
                    if cluster_of(u) != c {
                        edges.push((v, u));
                        edges.push((u, v));
                    }
                }
            }
        }
        let features = Matrix::from_fn(n, self.feature_dim, |_, _| rng.gen::<f64>());
        Graph::new(n, edges)?.with_features(features)
    }
}

/// Binomial(trials, p) draw by summing Bernoulli trials for small counts and
/// rounding the mean otherwise.
fn sample_count(rng: &mut impl Rng, trials: usize, p: f64) -> usize {
    if trials <= 64 {
        (0..trials).filter(|_| rng.gen_bool(p)).count()
    } else {
        let mean = trials as f64 * p;
        let frac = mean - mean.floor();
        mean.floor() as usize + usize::from(rng.gen_bool(frac))
    }
}
