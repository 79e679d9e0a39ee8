//! Topologies used to build scenarios: the Abilene backbone and random
//! scale-free graphs. Flow paths are filled in from hop-count shortest paths.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{FlowSpec, SwitchSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

const ABILENE_NODES: [&str; 11] = [
    "SEA", "SNV", "LAX", "DEN", "KSC", "HOU", "IND", "CHI", "ATL", "WDC", "NYC",
];
const ABILENE_LINKS: [(usize, usize); 14] = [
    (0, 1),
    (0, 3),
    (1, 2),
    (1, 3),
    (2, 5),
    (3, 4),
    (4, 5),
    (4, 6),
    (5, 8),
    (6, 7),
    (6, 8),
    (7, 10),
    (8, 9),
    (9, 10),
];

impl Topology {
    /// The 11-node, 14-link Abilene backbone.
    pub fn abilene() -> Self {
        Self {
            nodes: ABILENE_NODES.iter().map(|s| s.to_string()).collect(),
            edges: ABILENE_LINKS.to_vec(),
        }
    }

    /// Barabási-Albert preferential attachment: a clique of `m + 1` nodes,
    /// then every new node links to `m` distinct nodes chosen with
    /// probability proportional to degree.
    pub fn scale_free(num_nodes: usize, m: usize, seed: u64) -> Self {
        let m = m.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seed_nodes = (m + 1).min(num_nodes);
        let mut edges = Vec::new();
        // Every edge endpoint once, so a uniform pick is degree-proportional.
        let mut endpoints = Vec::new();
        for a in 0..seed_nodes {
            for b in a + 1..seed_nodes {
                edges.push((a, b));
                endpoints.extend([a, b]);
            }
        }
        for v in seed_nodes..num_nodes {
            let mut targets: Vec<usize> = Vec::with_capacity(m);
            while targets.len() < m.min(v) {
                let t = endpoints[rng.random_range(0..endpoints.len())];
                if !targets.contains(&t) {
                    targets.push(t);
                }
            }
            for t in targets {
                edges.push((t, v));
                endpoints.extend([t, v]);
            }
        }
        Self {
            nodes: (0..num_nodes).map(|i| format!("s{i}")).collect(),
            edges,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    pub fn switches(&self, capacity_pps: f64) -> Vec<SwitchSpec> {
        self.nodes
            .iter()
            .map(|n| SwitchSpec::new(n.clone(), capacity_pps))
            .collect()
    }

    /// Shortest-path router over this topology.
    pub fn router(&self) -> Router<'_> {
        Router {
            topo: self,
            adj: self.adjacency(),
            cache: vec![None; self.nodes.len()],
        }
    }
}

/// Breadth-first shortest paths with per-source parent trees cached.
/// Neighbours are visited in index order, so paths are deterministic.
pub struct Router<'a> {
    topo: &'a Topology,
    adj: Vec<Vec<usize>>,
    cache: Vec<Option<Vec<usize>>>,
}

impl Router<'_> {
    fn parents(&mut self, src: usize) -> &[usize] {
        if self.cache[src].is_none() {
            let mut parent = vec![usize::MAX; self.adj.len()];
            parent[src] = src;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if parent[v] == usize::MAX {
                        parent[v] = u;
                        queue.push_back(v);
                    }
                }
            }
            self.cache[src] = Some(parent);
        }
        self.cache[src].as_deref().unwrap()
    }

    /// Node indices from `src` to `dst` inclusive, or `None` when unreachable.
    pub fn path(&mut self, src: usize, dst: usize) -> Option<Vec<usize>> {
        let parent = self.parents(src);
        if parent[dst] == usize::MAX {
            return None;
        }
        let mut path = vec![dst];
        let mut at = dst;
        while at != src {
            at = parent[at];
            path.push(at);
        }
        path.reverse();
        Some(path)
    }

    /// A flow from `src` to `dst` routed on the shortest path.
    pub fn flow(
        &mut self,
        id: impl Into<String>,
        src: usize,
        dst: usize,
        target_rate: f64,
        rate_mean_pps: f64,
        rate_var_pps2: f64,
    ) -> Option<FlowSpec> {
        let path = self.path(src, dst)?;
        let names = &self.topo.nodes;
        Some(FlowSpec {
            id: id.into(),
            src: names[src].clone(),
            dst: names[dst].clone(),
            path: path.into_iter().map(|i| names[i].clone()).collect(),
            target_rate,
            rate_mean_pps,
            rate_var_pps2,
        })
    }
}
