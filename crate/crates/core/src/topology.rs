//! Agent graph and the consensus constraint operator.
//!
//! The constraint operator has one block row per edge. For an edge `(i, j)`
//! with `i < j` the row holds `+I` at block column `i` and `-I` at block
//! column `j`, so `A W` collects the differences `w_i - w_j`. The operator
//! is never materialised; products go through the edge list.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim, param, Error, Result};

/// Undirected simple graph over agents `0..agent_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentGraph {
    agent_count: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AgentGraph {
    /// Builds a graph from an edge list. Pairs are normalised to `(min, max)`
    /// and sorted; self-loops, duplicates and out-of-range indices are rejected.
    pub fn new(agent_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if agent_count == 0 {
            return param("a graph needs at least one agent");
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= agent_count || b >= agent_count {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) out of range for {agent_count} agents"
                )));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop at agent {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::Topology(format!("duplicate edge ({a}, {b})")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); agent_count];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            agent_count,
            edges,
            neighbors,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbour set `V_i`.
    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors
            .get(a)
            .is_some_and(|list| list.binary_search(&b).is_ok())
    }

    /// Hop distances from `source`; unreachable agents get `usize::MAX`.
    pub fn hop_distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.agent_count];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            for &u in &self.neighbors[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.hop_distances(0).iter().all(|&d| d != usize::MAX)
    }

    /// Parses an edge-list text: one `i j` pair per line, 0-based. Blank lines
    /// and lines starting with `#` are skipped. The agent count is one past the
    /// largest index unless `agent_count` is given.
    pub fn parse_edge_list(text: &str, agent_count: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace().map(str::parse::<usize>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => edges.push((a, b)),
                _ => {
                    return Err(Error::Data(format!(
                        "edge list line {}: expected `i j`, got {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        let inferred = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(1);
        Self::new(agent_count.unwrap_or(inferred), &edges)
    }

    pub fn load_edge_list(path: impl AsRef<Path>, agent_count: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_edge_list(&text, agent_count)
    }

    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
    }
}

/// Random connected graph with exactly `edge_count` edges: a uniformly
/// shuffled random-attachment spanning tree followed by uniformly chosen
/// extra edges.
pub fn random_connected_graph(agent_count: usize, edge_count: usize, seed: u64) -> Result<AgentGraph> {
    if agent_count == 0 {
        return param("agent count must be positive");
    }
    let max_edges = agent_count * (agent_count - 1) / 2;
    if edge_count + 1 < agent_count || edge_count > max_edges {
        return param(format!(
            "edge count {edge_count} outside [{}, {max_edges}] for {agent_count} agents",
            agent_count - 1
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..agent_count).collect();
    order.shuffle(&mut rng);
    let mut chosen = BTreeSet::new();
    for k in 1..agent_count {
        let parent = order[rng.gen_range(0..k)];
        let child = order[k];
        chosen.insert((parent.min(child), parent.max(child)));
    }
    let mut remaining: Vec<(usize, usize)> = (0..agent_count)
        .flat_map(|i| ((i + 1)..agent_count).map(move |j| (i, j)))
        .filter(|e| !chosen.contains(e))
        .collect();
    remaining.shuffle(&mut rng);
    let extra = edge_count - chosen.len();
    chosen.extend(remaining.into_iter().take(extra));
    let edges: Vec<_> = chosen.into_iter().collect();
    AgentGraph::new(agent_count, &edges)
}

/// `s x s` grid with 4-neighbourhood adjacency; cell `(row, col)` is agent
/// `row * s + col`.
pub fn grid_graph(s: usize) -> Result<AgentGraph> {
    if s == 0 {
        return param("grid subdivision must be at least 1");
    }
    let mut edges = Vec::new();
    for row in 0..s {
        for col in 0..s {
            let v = row * s + col;
            if col + 1 < s {
                edges.push((v, v + 1));
            }
            if row + 1 < s {
                edges.push((v, v + s));
            }
        }
    }
    AgentGraph::new(s * s, &edges)
}

/// Structural form of the block constraint matrix `A`.
#[derive(Debug, Clone)]
pub struct ConsensusConstraint {
    agent_count: usize,
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
    rows: usize,
    cols: usize,
}

/// Builds `A` for weights of shape `weight_dims = (n, nu)`.
pub fn build_constraint(graph: &AgentGraph, weight_dims: (usize, usize)) -> Result<ConsensusConstraint> {
    if !graph.is_connected() {
        return Err(Error::Topology("graph is not connected".into()));
    }
    Ok(ConsensusConstraint {
        agent_count: graph.agent_count(),
        edges: graph.edges().to_vec(),
        degrees: graph.degrees(),
        rows: weight_dims.0,
        cols: weight_dims.1,
    })
}

impl ConsensusConstraint {
    pub fn block_rows(&self) -> usize {
        self.edges.len()
    }

    pub fn block_cols(&self) -> usize {
        self.agent_count
    }

    pub fn block_dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sign of block `(edge, agent)`: `+1`, `-1` or `0`.
    pub fn sign(&self, edge: usize, agent: usize) -> i8 {
        let (i, j) = self.edges[edge];
        if agent == i {
            1
        } else if agent == j {
            -1
        } else {
            0
        }
    }

    /// Scalar `c` with `A_a^T A_b = c I`.
    pub fn gram_coefficient(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.degrees[a] as f64
        } else if self
            .edges
            .binary_search(&(a.min(b), a.max(b)))
            .is_ok()
        {
            -1.0
        } else {
            0.0
        }
    }

    fn check_blocks(&self, blocks: &[DMatrix<f64>], expected: usize, what: &str) -> Result<()> {
        if blocks.len() != expected {
            return dim(format!("{what}: expected {expected} blocks, got {}", blocks.len()));
        }
        for (k, b) in blocks.iter().enumerate() {
            if b.shape() != (self.rows, self.cols) {
                return dim(format!(
                    "{what}: block {k} has shape {:?}, expected {:?}",
                    b.shape(),
                    (self.rows, self.cols)
                ));
            }
        }
        Ok(())
    }

    /// Per-edge residuals `w_i - w_j`.
    pub fn apply(&self, weights: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        self.check_blocks(weights, self.agent_count, "constraint_apply")?;
        Ok(self
            .edges
            .iter()
            .map(|&(i, j)| &weights[i] - &weights[j])
            .collect())
    }

    /// Per-agent aggregates of `A^T lambda`.
    pub fn adjoint_apply(&self, multipliers: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        self.check_blocks(multipliers, self.edges.len(), "adjoint_apply")?;
        let mut out = vec![DMatrix::zeros(self.rows, self.cols); self.agent_count];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            out[i] += &multipliers[e];
            out[j] -= &multipliers[e];
        }
        Ok(out)
    }

    /// `A^T A W`, i.e. the graph Laplacian applied blockwise.
    pub fn laplacian_apply(&self, weights: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        self.adjoint_apply(&self.apply(weights)?)
    }

    /// Frobenius norm of `A W`.
    pub fn residual_norm(&self, weights: &[DMatrix<f64>]) -> Result<f64> {
        Ok(self
            .apply(weights)?
            .iter()
            .map(|r| r.norm_squared())
            .sum::<f64>()
            .sqrt())
    }
}
