//! The directed mobility graph: construction from homes and events,
//! isolated-node pruning, weak components and weighted degrees.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cluster::HomeLocation;
use crate::error::{Error, Result};
use crate::geo::{nearest_center, GeoPoint};
use crate::ingest::GeoEvent;
use crate::par::Exec;
use crate::select::NodeSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub point: GeoPoint,
    /// Index of this node in the node set it was built from.
    pub source: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Distinct persons homed at `src` observed at `dst`.
    pub weight: u64,
}

/// Directed weighted graph; edges sorted by `(src, dst)`, no self-loops,
/// no parallel edges.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    out_adj: Vec<Vec<(usize, u64)>>,
    in_adj: Vec<Vec<(usize, u64)>>,
}

impl MobilityGraph {
    pub fn new(nodes: Vec<Node>, mut edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        edges.sort_unstable();
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Data(format!("edge {}->{} outside {n} nodes", e.src, e.dst)));
            }
            if e.src == e.dst {
                return Err(Error::Data(format!("self-loop on node {}", e.src)));
            }
            if e.weight == 0 {
                return Err(Error::Data(format!("zero weight on edge {}->{}", e.src, e.dst)));
            }
        }
        if edges.windows(2).any(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst)) {
            return Err(Error::Data("parallel edges".into()));
        }
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for e in &edges {
            out_adj[e.src].push((e.dst, e.weight));
            in_adj[e.dst].push((e.src, e.weight));
        }
        for l in &mut in_adj {
            l.sort_unstable();
        }
        Ok(MobilityGraph {
            nodes,
            edges,
            out_adj,
            in_adj,
        })
    }

    /// Convenience constructor for tests and small fixtures.
    pub fn from_edges(n: usize, edges: &[(usize, usize, u64)]) -> Result<Self> {
        let nodes = (0..n)
            .map(|i| Node {
                point: GeoPoint::new(0.0, 0.0).expect("origin"),
                source: i,
            })
            .collect();
        let edges = edges
            .iter()
            .map(|&(src, dst, weight)| Edge { src, dst, weight })
            .collect();
        MobilityGraph::new(nodes, edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn out_neighbors(&self, v: usize) -> &[(usize, u64)] {
        &self.out_adj[v]
    }

    pub fn in_neighbors(&self, v: usize) -> &[(usize, u64)] {
        &self.in_adj[v]
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Same topology with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                weight: e.weight * factor,
                ..*e
            })
            .collect();
        MobilityGraph::new(self.nodes.clone(), edges)
    }
}

/// Node index per home and per event, by nearest haversine center.
pub struct Assignment {
    pub home_node: BTreeMap<String, usize>,
}

/// Edge `x -> y` weighs the number of distinct users homed at `x` with at
/// least one event assigned to `y != x`. Events of users without a home
/// are ignored.
pub fn build_graph(homes: &[HomeLocation], node_set: &NodeSet, events: &[GeoEvent], exec: Exec) -> Result<MobilityGraph> {
    if node_set.is_empty() {
        return Err(Error::EmptyInput("build_graph: empty node set"));
    }
    let centers = node_set.points();
    let home_nodes: Vec<usize> = exec
        .map(homes, |h| nearest_center(&h.center, &centers))
        .into_iter()
        .collect::<Result<_>>()?;
    let user_index: HashMap<&str, usize> = homes
        .iter()
        .enumerate()
        .map(|(i, h)| (h.user_id.as_str(), i))
        .collect();

    let homed: Vec<(usize, GeoPoint)> = events
        .iter()
        .filter_map(|e| user_index.get(e.user_id.as_str()).map(|&u| (u, e.location)))
        .collect();
    let event_nodes: Vec<usize> = exec
        .map(&homed, |(_, p)| nearest_center(p, &centers))
        .into_iter()
        .collect::<Result<_>>()?;

    let mut visits: HashSet<(usize, usize)> = HashSet::new();
    let mut weights: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (&(user, _), &y) in homed.iter().zip(&event_nodes) {
        let x = home_nodes[user];
        if x != y && visits.insert((user, y)) {
            *weights.entry((x, y)).or_default() += 1;
        }
    }

    let nodes = node_set
        .centers
        .iter()
        .enumerate()
        .map(|(i, c)| Node {
            point: c.point,
            source: i,
        })
        .collect();
    let edges = weights
        .into_iter()
        .map(|((src, dst), weight)| Edge { src, dst, weight })
        .collect();
    MobilityGraph::new(nodes, edges)
}

/// Home node per user under the same nearest-center rule as [`build_graph`].
pub fn assign_homes(homes: &[HomeLocation], node_set: &NodeSet, exec: Exec) -> Result<Assignment> {
    let centers = node_set.points();
    let nodes: Vec<usize> = exec
        .map(homes, |h| nearest_center(&h.center, &centers))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(Assignment {
        home_node: homes.iter().map(|h| h.user_id.clone()).zip(nodes).collect(),
    })
}

/// Remove nodes with no incident edge. Surviving nodes keep their relative
/// order and their `source` index.
pub fn prune_isolated(g: &MobilityGraph) -> (MobilityGraph, usize) {
    let n = g.node_count();
    let keep: Vec<bool> = (0..n)
        .map(|v| !g.out_adj[v].is_empty() || !g.in_adj[v].is_empty())
        .collect();
    let mut remap = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for v in 0..n {
        if keep[v] {
            remap[v] = nodes.len();
            nodes.push(g.nodes[v]);
        }
    }
    let edges = g
        .edges
        .iter()
        .map(|e| Edge {
            src: remap[e.src],
            dst: remap[e.dst],
            weight: e.weight,
        })
        .collect();
    let removed = n - nodes.len();
    let pruned = MobilityGraph::new(nodes, edges).expect("pruning preserves graph invariants");
    (pruned, removed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// Component per node; components are numbered by their smallest node.
    pub labels: Vec<usize>,
    pub count: usize,
}

/// Weakly connected components (edge direction ignored).
pub fn weak_components(g: &MobilityGraph) -> Components {
    let n = g.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for e in &g.edges {
        let (a, b) = (find(&mut parent, e.src), find(&mut parent, e.dst));
        if a != b {
            // keep the smaller id as root
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            parent[hi] = lo;
        }
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut labels = vec![0; n];
    let mut count = 0;
    for v in 0..n {
        let r = find(&mut parent, v);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = count;
            count += 1;
        }
        labels[v] = label_of_root[r];
    }
    Components { labels, count }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub min: u64,
    pub max: u64,
    /// Lower median.
    pub median: u64,
}

impl Summary {
    pub fn of(values: &[u64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        Some(Summary {
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            median: sorted[(sorted.len() - 1) / 2],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeStats {
    pub in_degree: Vec<u64>,
    pub out_degree: Vec<u64>,
    pub in_summary: Summary,
    pub out_summary: Summary,
}

/// Weighted in- and out-degree per node.
pub fn degree_stats(g: &MobilityGraph) -> Result<DegreeStats> {
    if g.node_count() == 0 {
        return Err(Error::EmptyInput("degree_stats on an empty graph"));
    }
    let mut in_degree = vec![0u64; g.node_count()];
    let mut out_degree = vec![0u64; g.node_count()];
    for e in &g.edges {
        out_degree[e.src] += e.weight;
        in_degree[e.dst] += e.weight;
    }
    Ok(DegreeStats {
        in_summary: Summary::of(&in_degree).expect("non-empty"),
        out_summary: Summary::of(&out_degree).expect("non-empty"),
        in_degree,
        out_degree,
    })
}
