//! Balanced BFS-grown partitioner with a greedy boundary refinement pass,
//! plus import/export of externally computed assignments (e.g. METIS output).

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};

/// Allowed overshoot of the largest part over `ceil(n / parts)`.
pub const BALANCE_SLACK: f64 = 0.10;

const REFINE_PASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionAssignment {
    num_parts: usize,
    part_of: Vec<u32>,
}

impl PartitionAssignment {
    pub fn new(num_parts: usize, part_of: Vec<u32>) -> Result<Self> {
        if num_parts == 0 {
            return Err(Error::Partition("zero parts".into()));
        }
        if let Some(node) = part_of.iter().position(|&p| p as usize >= num_parts) {
            return Err(Error::Partition(format!(
                "node {node} assigned to part {} but only {num_parts} parts exist",
                part_of[node]
            )));
        }
        Ok(Self { num_parts, part_of })
    }

    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    pub fn num_nodes(&self) -> usize {
        self.part_of.len()
    }

    pub fn part_of(&self, node: usize) -> usize {
        self.part_of[node] as usize
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.part_of
    }

    /// Members of every part in ascending node order.
    pub fn parts(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.num_parts];
        for (v, &p) in self.part_of.iter().enumerate() {
            parts[p as usize].push(v);
        }
        parts
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_parts];
        for &p in &self.part_of {
            sizes[p as usize] += 1;
        }
        sizes
    }
}

/// Number of unordered node pairs joined by an edge (either direction)
/// whose endpoints lie in different parts.
pub fn edge_cut(g: &Graph, assign: &PartitionAssignment) -> usize {
    g.undirected_neighbors()
        .iter()
        .enumerate()
        .map(|(v, ns)| {
            ns.iter()
                .filter(|&&u| (u as usize) > v && assign.part_of(v) != assign.part_of(u as usize))
                .count()
        })
        .sum()
}

/// Splits `g` into `num_parts` parts of size `floor(n/k)` or `ceil(n/k)`
/// grown by BFS from low-degree seeds, then moves boundary nodes that reduce
/// the cut while keeping every part within the balance slack.
pub fn partition(g: &Graph, num_parts: usize, seed: u64) -> Result<PartitionAssignment> {
    let n = g.num_nodes();
    if num_parts == 0 || num_parts > n {
        return Err(Error::Partition(format!(
            "num_parts must lie in [1, {n}], got {num_parts}"
        )));
    }
    let adj = g.undirected_neighbors();
    let mut rank: Vec<usize> = (0..n).collect();
    rank.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // Seed candidates: ascending degree, ties broken by the seeded shuffle.
    let mut seeds = rank.clone();
    seeds.sort_by_key(|&v| adj[v].len());
    let mut seed_cursor = 0;

    const UNASSIGNED: u32 = u32::MAX;
    let mut part_of = vec![UNASSIGNED; n];
    let mut queued_for = vec![usize::MAX; n];
    let mut queue = VecDeque::new();

    for p in 0..num_parts {
        let target = n / num_parts + usize::from(p < n % num_parts);
        let mut size = 0;
        queue.clear();
        while size < target {
            let v = match queue.pop_front() {
                Some(v) => v,
                None => {
                    while part_of[seeds[seed_cursor]] != UNASSIGNED {
                        seed_cursor += 1;
                    }
                    seeds[seed_cursor]
                }
            };
            if part_of[v] != UNASSIGNED {
                continue;
            }
            part_of[v] = p as u32;
            size += 1;
            for &u in &adj[v] {
                let u = u as usize;
                if part_of[u] == UNASSIGNED && queued_for[u] != p {
                    queued_for[u] = p;
                    queue.push_back(u);
                }
            }
        }
    }

    let mut sizes = vec![0usize; num_parts];
    for &p in &part_of {
        sizes[p as usize] += 1;
    }
    let cap = ((n.div_ceil(num_parts) as f64) * (1.0 + BALANCE_SLACK)).floor() as usize;
    let visit = rank;
    for _ in 0..REFINE_PASSES {
        let mut moved = false;
        for &v in &visit {
            let own = part_of[v] as usize;
            if sizes[own] <= 1 || adj[v].is_empty() {
                continue;
            }
            let mut links: Vec<(usize, usize)> = Vec::new();
            for &u in &adj[v] {
                let q = part_of[u as usize] as usize;
                match links.iter_mut().find(|(part, _)| *part == q) {
                    Some((_, count)) => *count += 1,
                    None => links.push((q, 1)),
                }
            }
            let internal = links.iter().find(|(q, _)| *q == own).map_or(0, |&(_, c)| c);
            let best = links
                .iter()
                .filter(|&&(q, c)| q != own && c > internal && sizes[q] < cap)
                .max_by_key(|&&(q, c)| (c, std::cmp::Reverse(q)));
            if let Some(&(q, _)) = best {
                part_of[v] = q as u32;
                sizes[own] -= 1;
                sizes[q] += 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    PartitionAssignment::new(num_parts, part_of)
}

/// One part index per line. `num_parts` defaults to `max index + 1`.
pub fn parse_partition(
    text: &str,
    num_nodes: usize,
    num_parts: Option<usize>,
) -> Result<PartitionAssignment> {
    let mut part_of = Vec::with_capacity(num_nodes);
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let p: u32 = line.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("invalid part index '{line}'"),
        })?;
        part_of.push(p);
    }
    if part_of.len() != num_nodes {
        return Err(Error::Partition(format!(
            "partition file lists {} nodes, graph has {num_nodes}",
            part_of.len()
        )));
    }
    let parts = num_parts.unwrap_or_else(|| part_of.iter().max().map_or(1, |&m| m as usize + 1));
    PartitionAssignment::new(parts, part_of)
}

pub fn import_partition(
    path: impl AsRef<Path>,
    num_nodes: usize,
    num_parts: Option<usize>,
) -> Result<PartitionAssignment> {
    parse_partition(&fs::read_to_string(path)?, num_nodes, num_parts)
}

pub fn export_partition(path: impl AsRef<Path>, assign: &PartitionAssignment) -> Result<()> {
    let mut out = String::with_capacity(assign.num_nodes() * 3);
    for &p in assign.as_slice() {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
