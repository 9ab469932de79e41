use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::DistanceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated_id: String,
    pub control_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// In the row order of the distance matrix.
    pub pairs: Vec<MatchedPair>,
    pub total_distance: f64,
    pub unmatched_treated: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

struct Edge {
    to: usize,
    cap: u8,
    cost: f64,
}

struct Graph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Graph {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap: 1, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
    }
}

#[derive(PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, node)
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-total-distance 1:1 matching of treated rows to control columns.
///
/// Solved exactly as a min-cost flow by successive shortest augmenting paths
/// (Dijkstra with node potentials). Each augmentation adds the cheapest
/// extra pair, so the result is a maximum-cardinality matching of minimum
/// total distance among those. Infinite entries are never used; treated
/// units left without a partner are listed in `unmatched_treated`.
///
/// Subjects are laid out in id order internally and Dijkstra breaks ties by
/// node index, so results do not depend on row or column order.
pub fn optimal_pair_match(d: &DistanceMatrix) -> MatchResult {
    let nt = d.n_treated();
    let nc = d.n_controls();
    let mut t_order: Vec<usize> = (0..nt).collect();
    t_order.sort_by(|&a, &b| d.treated_ids[a].cmp(&d.treated_ids[b]));
    let mut c_order: Vec<usize> = (0..nc).collect();
    c_order.sort_by(|&a, &b| d.control_ids[a].cmp(&d.control_ids[b]));

    let source = 0;
    let sink = nt + nc + 1;
    let n_nodes = nt + nc + 2;
    let mut g = Graph::new(n_nodes);
    for ti in 0..nt {
        g.add(source, 1 + ti, 0.0);
    }
    for (ti, &row) in t_order.iter().enumerate() {
        for (ci, &col) in c_order.iter().enumerate() {
            let cost = d.get(row, col);
            if cost.is_finite() {
                g.add(1 + ti, 1 + nt + ci, cost);
            }
        }
    }
    for ci in 0..nc {
        g.add(1 + nt + ci, sink, 0.0);
    }

    let mut potential = vec![0.0f64; n_nodes];
    let mut dist = vec![f64::INFINITY; n_nodes];
    let mut prev_edge = vec![usize::MAX; n_nodes];
    loop {
        dist.fill(f64::INFINITY);
        prev_edge.fill(usize::MAX);
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem { dist: 0.0, node: source });
        while let Some(HeapItem { dist: du, node: u }) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            for &e in &g.adj[u] {
                let edge = &g.edges[e];
                if edge.cap == 0 {
                    continue;
                }
                // potentials keep reduced costs nonnegative up to rounding
                let reduced = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                let nd = du + reduced;
                if nd < dist[edge.to] {
                    dist[edge.to] = nd;
                    prev_edge[edge.to] = e;
                    heap.push(HeapItem { dist: nd, node: edge.to });
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        for v in 0..n_nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            g.edges[e].cap -= 1;
            g.edges[e ^ 1].cap += 1;
            v = g.edges[e ^ 1].to;
        }
    }

    let mut partner = vec![None; nt];
    for ti in 0..nt {
        for &e in &g.adj[1 + ti] {
            let edge = &g.edges[e];
            if e % 2 == 0 && edge.cap == 0 && edge.to > nt && edge.to <= nt + nc {
                partner[t_order[ti]] = Some(c_order[edge.to - 1 - nt]);
            }
        }
    }

    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (row, p) in partner.iter().enumerate() {
        match p {
            Some(col) => pairs.push(MatchedPair {
                treated_id: d.treated_ids[row].clone(),
                control_id: d.control_ids[*col].clone(),
                distance: d.get(row, *col),
            }),
            None => unmatched.push(d.treated_ids[row].clone()),
        }
    }
    let total_distance = pairs.iter().map(|p| p.distance).sum();
    let mut warnings = Vec::new();
    if !unmatched.is_empty() {
        warnings.push(format!(
            "{} treated unit(s) could not be matched to a feasible control",
            unmatched.len()
        ));
    }
    MatchResult {
        pairs,
        total_distance,
        unmatched_treated: unmatched,
        warnings,
    }
}
