//! Small-world interaction graph.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Connectivity redraws before generation gives up.
pub const MAX_ATTEMPTS: usize = 100;

/// Undirected simple graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocialGraph {
    n: usize,
    adjacency: Vec<Vec<usize>>,
}

impl SocialGraph {
    /// Build from an edge list; rejects self-loops, duplicates and
    /// out-of-range endpoints.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::AgentOutOfRange { id: a.max(b), n });
            }
            if a == b {
                return Err(Error::Config(format!("self-loop on node {a}")));
            }
            if !sets[a].insert(b) || !sets[b].insert(a) {
                return Err(Error::Config(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Self::from_sets(sets))
    }

    fn from_sets(sets: Vec<BTreeSet<usize>>) -> Self {
        SocialGraph {
            n: sets.len(),
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    /// Ring lattice where each node links to its `k / 2` nearest neighbors
    /// on each side.
    pub fn ring_lattice(n: usize, k: usize) -> Result<Self> {
        check_params(n, k, 0.0)?;
        Ok(Self::from_sets(lattice_sets(n, k)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::AgentOutOfRange { id: i, n: self.n })
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.get(i).map_or(0, Vec::len)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency
            .get(i)
            .is_some_and(|nbrs| nbrs.binary_search(&j).is_ok())
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == self.n
    }

    /// One `"i j"` pair per line. Comment lines start with `#`.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(n: usize, text: &str) -> Result<Self> {
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
                    return Err(Error::Schema(format!(
                        "edge list line {}: expected two node ids",
                        lineno + 1
                    )))
                }
            }
        }
        Self::from_edges(n, &edges)
    }
}

fn check_params(n: usize, k: usize, p: f64) -> Result<()> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::Config(format!("ring degree k must be even and at least 2, got {k}")));
    }
    if n <= k {
        return Err(Error::Config(format!("need n > k, got n = {n}, k = {k}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("rewiring probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn lattice_sets(n: usize, k: usize) -> Vec<BTreeSet<usize>> {
    let mut sets = vec![BTreeSet::new(); n];
    for u in 0..n {
        for j in 1..=k / 2 {
            let v = (u + j) % n;
            sets[u].insert(v);
            sets[v].insert(u);
        }
    }
    sets
}

/// Rewire each lattice edge `(u, u + j)` with probability `p` to `(u, w)`,
/// `w` uniform over nodes that are neither `u` nor already adjacent to it.
fn rewire<R: Rng>(n: usize, k: usize, p: f64, rng: &mut R) -> SocialGraph {
    let mut sets = lattice_sets(n, k);
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if !rng.random_bool(p) {
                continue;
            }
            if !sets[u].contains(&v) || sets[u].len() >= n - 1 {
                continue;
            }
            let w = loop {
                let w = rng.random_range(0..n);
                if w != u && !sets[u].contains(&w) {
                    break w;
                }
            };
            sets[u].remove(&v);
            sets[v].remove(&u);
            sets[u].insert(w);
            sets[w].insert(u);
        }
    }
    SocialGraph::from_sets(sets)
}

/// Watts–Strogatz small-world graph, redrawn with derived seeds until
/// connected.
pub fn watts_strogatz(n: usize, k: usize, p: f64, seed: u64) -> Result<SocialGraph> {
    check_params(n, k, p)?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::rng_from(seed::next_attempt(seed, attempt));
        let graph = rewire(n, k, p, &mut rng);
        if graph.is_connected() {
            return Ok(graph);
        }
        log::debug!("graph seed {seed} attempt {attempt} disconnected; redrawing");
    }
    Err(Error::GraphGeneration(MAX_ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_ring_neighbors() {
        let g = SocialGraph::ring_lattice(6, 2).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[1, 5]);
        assert_eq!(g.neighbors(3).unwrap(), &[2, 4]);
        assert!(matches!(g.neighbors(6), Err(Error::AgentOutOfRange { id: 6, n: 6 })));
    }

    #[test]
    fn zero_rewiring_is_the_lattice() {
        let g = watts_strogatz(200, 6, 0.0, 42).unwrap();
        assert_eq!(g, SocialGraph::ring_lattice(200, 6).unwrap());
        for i in 0..200 {
            let mut expected: Vec<usize> = (1..=3).flat_map(|d| [(i + d) % 200, (i + 200 - d) % 200]).collect();
            expected.sort_unstable();
            assert_eq!(g.neighbors(i).unwrap(), expected.as_slice());
        }
    }

    #[test]
    fn full_rewiring_keeps_a_simple_graph() {
        // Brute-force validation over the raw adjacency.
        for seed in 0..50 {
            let g = watts_strogatz(10, 4, 1.0, seed).unwrap();
            assert_eq!(g.edge_count(), 20);
            let degree_sum: usize = (0..10).map(|i| g.degree(i)).sum();
            assert_eq!(degree_sum, 40);
            for i in 0..10 {
                let nbrs = g.neighbors(i).unwrap();
                assert!(!nbrs.contains(&i));
                assert!(nbrs.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn desk_scale_graph() {
        let g = watts_strogatz(200, 6, 0.1, 11).unwrap();
        assert_eq!(g.edge_count(), 600);
        assert!(g.is_connected());
        let mean_degree = (0..200).map(|i| g.degree(i)).sum::<usize>() as f64 / 200.0;
        assert_eq!(mean_degree, 6.0);
    }

    #[test]
    fn parameters_are_checked() {
        assert!(watts_strogatz(6, 3, 0.1, 0).is_err());
        assert!(watts_strogatz(6, 6, 0.1, 0).is_err());
        assert!(watts_strogatz(10, 0, 0.1, 0).is_err());
        assert!(watts_strogatz(10, 2, 1.5, 0).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = watts_strogatz(30, 4, 0.3, 5).unwrap();
        let text = g.to_edge_list();
        let back = SocialGraph::from_edge_list(30, &text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_edge_list(), text);
        assert!(SocialGraph::from_edge_list(3, "0 0\n").is_err());
        assert!(SocialGraph::from_edge_list(3, "0 1\n1 0\n").is_err());
        assert!(SocialGraph::from_edge_list(3, "0 x\n").is_err());
    }

    #[test]
    fn disconnected_graphs_are_detected() {
        let g = SocialGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(!g.is_connected());
    }
}
