//! Weighted betweenness centrality on the directed graph (Brandes).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::graph::MobilityGraph;
use crate::par::Exec;

/// Relative tolerance under which two path lengths count as equal.
pub const PATH_TIE_TOLERANCE: f64 = 1e-9;

/// Sources per work unit; partial sums are added in source order.
const SOURCE_CHUNK: usize = 32;

/// How an edge weight (persons) becomes a traversal cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// `1 / weight`: heavy corridors are short.
    #[default]
    Reciprocal,
    /// Every edge costs 1.
    Uniform,
}

impl CostMode {
    #[inline]
    pub fn cost(self, weight: u64) -> f64 {
        match self {
            CostMode::Reciprocal => 1.0 / weight as f64,
            CostMode::Uniform => 1.0,
        }
    }
}

impl std::str::FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reciprocal" => Ok(CostMode::Reciprocal),
            "uniform" => Ok(CostMode::Uniform),
            other => Err(Error::config("cost-mode", format!("expected reciprocal|uniform, got {other:?}"))),
        }
    }
}

#[inline]
fn same_length(a: f64, b: f64) -> bool {
    (a - b).abs() <= PATH_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralityScores {
    pub scores: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// Lower median.
    pub median: f64,
}

impl CentralityScores {
    fn new(scores: Vec<f64>) -> Self {
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let (min, max, median) = match sorted.len() {
            0 => (0.0, 0.0, 0.0),
            n => (sorted[0], sorted[n - 1], sorted[(n - 1) / 2]),
        };
        CentralityScores {
            scores,
            min,
            max,
            median,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-source scratch space.
struct Workspace {
    dist: Vec<f64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    preds: Vec<Vec<usize>>,
    settled: Vec<bool>,
    stack: Vec<usize>,
    heap: BinaryHeap<Entry>,
    queue: std::collections::VecDeque<usize>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            dist: vec![f64::INFINITY; n],
            sigma: vec![0.0; n],
            delta: vec![0.0; n],
            preds: vec![Vec::new(); n],
            settled: vec![false; n],
            stack: Vec::with_capacity(n),
            heap: BinaryHeap::new(),
            queue: std::collections::VecDeque::new(),
        }
    }

    fn reset(&mut self) {
        for v in self.stack.drain(..) {
            self.dist[v] = f64::INFINITY;
            self.sigma[v] = 0.0;
            self.delta[v] = 0.0;
            self.preds[v].clear();
            self.settled[v] = false;
        }
        self.heap.clear();
        self.queue.clear();
    }

    /// Dijkstra from `s` with tie-tolerant path counting; fills `stack` in
    /// order of non-decreasing distance.
    fn weighted(&mut self, g: &MobilityGraph, s: usize, mode: CostMode) {
        self.dist[s] = 0.0;
        self.sigma[s] = 1.0;
        self.heap.push(Entry { dist: 0.0, node: s });
        while let Some(Entry { dist, node: v }) = self.heap.pop() {
            if self.settled[v] || dist > self.dist[v] {
                continue;
            }
            self.settled[v] = true;
            self.stack.push(v);
            for &(w, weight) in g.out_neighbors(v) {
                if self.settled[w] {
                    continue;
                }
                let nd = self.dist[v] + mode.cost(weight);
                if self.dist[w].is_infinite() || (nd < self.dist[w] && !same_length(nd, self.dist[w])) {
                    self.dist[w] = nd;
                    self.sigma[w] = self.sigma[v];
                    self.preds[w].clear();
                    self.preds[w].push(v);
                    self.heap.push(Entry { dist: nd, node: w });
                } else if same_length(nd, self.dist[w]) {
                    self.sigma[w] += self.sigma[v];
                    self.preds[w].push(v);
                }
            }
        }
    }

    /// Breadth-first variant for unit costs.
    fn unweighted(&mut self, g: &MobilityGraph, s: usize) {
        self.dist[s] = 0.0;
        self.sigma[s] = 1.0;
        self.queue.push_back(s);
        while let Some(v) = self.queue.pop_front() {
            self.stack.push(v);
            for &(w, _) in g.out_neighbors(v) {
                if self.dist[w].is_infinite() {
                    self.dist[w] = self.dist[v] + 1.0;
                    self.queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1.0 {
                    self.sigma[w] += self.sigma[v];
                    self.preds[w].push(v);
                }
            }
        }
    }

    fn accumulate(&mut self, s: usize, into: &mut [f64]) {
        for &w in self.stack.iter().rev() {
            let coeff = (1.0 + self.delta[w]) / self.sigma[w];
            for &v in &self.preds[w] {
                self.delta[v] += self.sigma[v] * coeff;
            }
            if w != s {
                into[w] += self.delta[w];
            }
        }
    }
}

pub fn betweenness(g: &MobilityGraph, mode: CostMode) -> CentralityScores {
    betweenness_with(g, mode, Exec::default())
}

/// Unnormalized betweenness over ordered source/target pairs. Sources are
/// processed in fixed-size chunks whose partial sums are combined in order,
/// so the result does not depend on `exec` or the thread count.
pub fn betweenness_with(g: &MobilityGraph, mode: CostMode, exec: Exec) -> CentralityScores {
    let n = g.node_count();
    let chunks = n.div_ceil(SOURCE_CHUNK);
    let partials = exec.map_range(chunks, |c| {
        let mut ws = Workspace::new(n);
        let mut acc = vec![0.0; n];
        for s in (c * SOURCE_CHUNK)..((c + 1) * SOURCE_CHUNK).min(n) {
            match mode {
                CostMode::Uniform => ws.unweighted(g, s),
                CostMode::Reciprocal => ws.weighted(g, s, mode),
            }
            ws.accumulate(s, &mut acc);
            ws.reset();
        }
        acc
    });
    let mut scores = vec![0.0; n];
    for part in partials {
        for (x, p) in scores.iter_mut().zip(part) {
            *x += p;
        }
    }
    CentralityScores::new(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedNode {
    pub id: usize,
    pub score: f64,
    pub point: GeoPoint,
}

/// The `k` highest-scoring nodes, ties broken by lower id. Returns every
/// node when `k` exceeds the node count.
pub fn rank_nodes(g: &MobilityGraph, scores: &[f64], k: usize) -> Result<Vec<RankedNode>> {
    if k == 0 {
        return Err(Error::config("top-k", "must be at least 1"));
    }
    if scores.len() != g.node_count() {
        return Err(Error::Data(format!("{} scores for {} nodes", scores.len(), g.node_count())));
    }
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(ids
        .into_iter()
        .take(k)
        .map(|id| RankedNode {
            id,
            score: scores[id],
            point: g.nodes()[id].point,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_betweenness;
    use proptest::prelude::*;

    #[test]
    fn directed_path() {
        let g = MobilityGraph::from_edges(3, &[(0, 1, 1), (1, 2, 1)]).unwrap();
        for mode in [CostMode::Uniform, CostMode::Reciprocal] {
            assert_eq!(betweenness(&g, mode).scores, vec![0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn directed_cycle() {
        let g = MobilityGraph::from_edges(3, &[(0, 1, 1), (1, 2, 1), (2, 0, 1)]).unwrap();
        assert_eq!(betweenness(&g, CostMode::Uniform).scores, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn pure_source_scores_zero() {
        let g = MobilityGraph::from_edges(4, &[(0, 1, 2), (0, 2, 1), (1, 3, 1), (2, 3, 5)]).unwrap();
        let s = betweenness(&g, CostMode::Reciprocal).scores;
        assert_eq!(s[0], 0.0);
        assert_eq!(s[3], 0.0);
    }

    #[test]
    fn reciprocal_prefers_heavy_corridor() {
        // 0->1->3 costs 1/10 + 1/10, 0->2->3 costs 1 + 1
        let g = MobilityGraph::from_edges(4, &[(0, 1, 10), (1, 3, 10), (0, 2, 1), (2, 3, 1)]).unwrap();
        assert_eq!(betweenness(&g, CostMode::Reciprocal).scores, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(betweenness(&g, CostMode::Uniform).scores, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn ranking() {
        let g = MobilityGraph::from_edges(3, &[]).unwrap();
        let top = rank_nodes(&g, &[5.0, 2.0, 5.0], 1).unwrap();
        assert_eq!(top.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0]);
        let all = rank_nodes(&g, &[5.0, 2.0, 5.0], 3).unwrap();
        assert_eq!(all.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 2, 1]);
        assert_eq!(rank_nodes(&g, &[5.0, 2.0, 5.0], 10).unwrap().len(), 3);
        assert!(rank_nodes(&g, &[5.0, 2.0, 5.0], 0).is_err());
    }

    fn digraph() -> impl Strategy<Value = MobilityGraph> {
        (1usize..=20).prop_flat_map(|n| {
            prop::collection::btree_map((0..n, 0..n), 1u64..5, 0..(3 * n))
                .prop_map(move |m| {
                    let e: Vec<(usize, usize, u64)> = m.into_iter().filter(|((a, b), _)| a != b).map(|((a, b), w)| (a, b, w)).collect();
                    MobilityGraph::from_edges(n, &e).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn matches_enumeration_oracle(g in digraph()) {
            for mode in [CostMode::Uniform, CostMode::Reciprocal] {
                let got = betweenness_with(&g, mode, Exec::Sequential).scores;
                let want = oracle_betweenness(&g, mode).unwrap();
                for (a, b) in got.iter().zip(&want) {
                    prop_assert!((a - b).abs() <= 1e-6, "{mode:?}: {got:?} vs {want:?}");
                }
                prop_assert_eq!(&betweenness_with(&g, mode, Exec::Parallel).scores, &got);
                prop_assert!(got.iter().all(|&x| x >= 0.0));
            }
        }

        #[test]
        fn reciprocal_scale_invariant(g in digraph()) {
            let a = betweenness(&g, CostMode::Reciprocal).scores;
            let b = betweenness(&g.scaled(3).unwrap(), CostMode::Reciprocal).scores;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}
