//! Undirected agent topologies.
//!
//! Every agent is its own neighbor: `k ∈ N_k` always holds, so the degree
//! `n_k = |N_k|` counts the self-loop once. Agents are 0-based.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to read network file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse network JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("network must have at least one agent")]
    Empty,
    #[error("edge ({0}, {1}) references an agent outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("network is disconnected: agent 0 reaches {reached} of {total} agents")]
    Disconnected { reached: usize, total: usize },
}

/// On-disk form: `{"n": 4, "edges": [[0,1],[1,2]]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct NetworkFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    /// Sorted neighbor lists, each containing the agent itself.
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    /// Builds a network from an unordered edge list. Duplicates and
    /// self-pairs are ignored; self-loops are added for every agent.
    pub fn from_edges(n: usize, edges: &[[usize; 2]]) -> Result<Self, NetworkError> {
        if n == 0 {
            return Err(NetworkError::Empty);
        }
        let mut sets: Vec<BTreeSet<usize>> = (0..n).map(|k| BTreeSet::from([k])).collect();
        for &[i, j] in edges {
            if i >= n || j >= n {
                return Err(NetworkError::EdgeOutOfRange(i, j, n));
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        let net = Network {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        };
        let reached = net.reachable_from(0);
        if reached != n {
            return Err(NetworkError::Disconnected { reached, total: n });
        }
        Ok(net)
    }

    pub fn from_file(file: &NetworkFile) -> Result<Self, NetworkError> {
        Self::from_edges(file.n, &file.edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)?;
        let file: NetworkFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            n: self.len(),
            edges: self.edges().collect(),
        }
    }

    /// Number of agents `N`.
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// `N_k`, including `k`.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    /// `n_k = |N_k|`.
    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.len()).map(|k| self.degree(k)).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn contains_edge(&self, k: usize, l: usize) -> bool {
        self.neighbors[k].binary_search(&l).is_ok()
    }

    /// Undirected edges `i < j`, excluding self-loops.
    pub fn edges(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| [i, j]))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    fn reachable_from(&self, start: usize) -> usize {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(k) = queue.pop_front() {
            for &l in &self.neighbors[k] {
                if !seen[l] {
                    seen[l] = true;
                    count += 1;
                    queue.push_back(l);
                }
            }
        }
        count
    }

    /// Erdős–Rényi graph with each pair present independently with
    /// probability `edge_prob`. Components left disconnected are joined
    /// by linking a random member of each to a random member of the
    /// component containing agent 0, so the result is always connected.
    pub fn random(n: usize, edge_prob: f64, seed: u64) -> Self {
        let n = n.max(1);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < edge_prob {
                    edges.push([i, j]);
                }
            }
        }
        loop {
            let labels = component_labels(n, &edges);
            let Some(&other) = labels.iter().find(|&&c| c != labels[0]) else {
                break;
            };
            let main: Vec<usize> = (0..n).filter(|&k| labels[k] == labels[0]).collect();
            let stray: Vec<usize> = (0..n).filter(|&k| labels[k] == other).collect();
            let a = main[rng.random_range(0..main.len())];
            let b = stray[rng.random_range(0..stray.len())];
            edges.push([a, b]);
        }
        Self::from_edges(n, &edges).expect("augmented graph is connected")
    }

    /// Star-of-hubs topology: each hub links to every other agent, each leaf
    /// links to the hubs only. Hubs occupy indices `0..n_hubs`.
    pub fn unbalanced(n_hubs: usize, n_leaves: usize) -> Self {
        let n_hubs = n_hubs.max(1);
        let n = n_hubs + n_leaves;
        let mut edges = Vec::new();
        for h in 0..n_hubs {
            for k in (h + 1)..n {
                edges.push([h, k]);
            }
        }
        Self::from_edges(n, &edges).expect("hubs reach every agent")
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| [i, j]))
            .collect();
        Self::from_edges(n.max(1), &edges).expect("complete graph is connected")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|k| [k - 1, k]).collect();
        Self::from_edges(n.max(1), &edges).expect("path graph is connected")
    }
}

fn component_labels(n: usize, edges: &[[usize; 2]]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &[i, j] in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    (0..n).map(|k| find(&mut parent, k)).collect()
}
