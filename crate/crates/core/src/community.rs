//! Modularity and Louvain community detection on the symmetrized graph.
//!
//! Direction is dropped by summing both orientations,
//! `A(u, v) = w(u -> v) + w(v -> u)`. With `k_i = sum_j A(i, j)` and
//! `2m = sum_ij A(i, j)`, Newman's modularity is
//!
//! ```text
//! Q = 1/(2m) * sum_ij [A(i, j) - k_i k_j / (2m)] * delta(c_i, c_j)
//!   = sum_c [ in_c / (2m) - (tot_c / (2m))^2 ]
//! ```
//!
//! where `in_c` sums `A` over ordered pairs inside community `c` and `tot_c`
//! sums `k_i` over its members.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::MobilityGraph;

/// Gains at or below this do not move a node.
pub const LOUVAIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityPartition {
    /// Dense community id per node, numbered by smallest member.
    pub communities: Vec<usize>,
    pub count: usize,
    pub modularity: f64,
}

pub fn modularity(g: &MobilityGraph, partition: &[usize]) -> Result<f64> {
    let n = g.node_count();
    if partition.len() != n {
        return Err(Error::Data(format!(
            "partition covers {} of {n} nodes",
            partition.len()
        )));
    }
    let two_m = 2.0 * g.total_weight() as f64;
    if two_m == 0.0 {
        return Ok(0.0);
    }
    let k = partition.iter().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; k];
    let mut tot = vec![0.0; k];
    for e in g.edges() {
        let w = e.weight as f64;
        tot[partition[e.src]] += w;
        tot[partition[e.dst]] += w;
        if partition[e.src] == partition[e.dst] {
            inside[partition[e.src]] += 2.0 * w;
        }
    }
    Ok(inside
        .iter()
        .zip(&tot)
        .map(|(i, t)| i / two_m - (t / two_m).powi(2))
        .sum())
}

/// Undirected weighted graph used at each Louvain level. `loops[i]` holds
/// `A(i, i)`, the weight folded into node `i` by aggregation.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl Level {
    fn from_graph(g: &MobilityGraph) -> Self {
        let n = g.node_count();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for e in g.edges() {
            adj[e.src].push((e.dst, e.weight as f64));
            adj[e.dst].push((e.src, e.weight as f64));
        }
        Level::new(adj, vec![0.0; n])
    }

    fn new(mut adj: Vec<Vec<(usize, f64)>>, loops: Vec<f64>) -> Self {
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
            // fold parallel entries
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
            for &(v, w) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == v => last.1 += w,
                    _ => merged.push((v, w)),
                }
            }
            *list = merged;
        }
        let degree: Vec<f64> = adj
            .iter()
            .zip(&loops)
            .map(|(l, s)| l.iter().map(|&(_, w)| w).sum::<f64>() + s)
            .collect();
        let two_m = degree.iter().sum();
        Level {
            adj,
            loops,
            degree,
            two_m,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Local moves until a full sweep moves nothing. Returns the community
    /// of each node and whether anything moved.
    fn local_moves(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot: Vec<f64> = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let m = self.two_m / 2.0;

        let mut link = vec![0.0; n];
        let mut seen = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut any_move = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let ki = self.degree[i];
                let own = comm[i];
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    link[c] += w;
                }
                tot[own] -= ki;
                // modularity change of inserting i into c, up to a shared factor
                let gain = |c: usize, link_c: f64| (link_c - tot[c] * ki / self.two_m) / m;
                let stay = gain(own, link[own]);
                let mut best = own;
                let mut best_gain = stay;
                for &c in &touched {
                    let g = gain(c, link[c]);
                    // near-equal gains keep the first candidate
                    if g > best_gain + LOUVAIN_TOLERANCE {
                        best = c;
                        best_gain = g;
                    }
                }
                if best != own && best_gain - stay > LOUVAIN_TOLERANCE {
                    comm[i] = best;
                    moved = true;
                } else {
                    best = own;
                }
                tot[best] += ki;
                for &c in &touched {
                    link[c] = 0.0;
                    seen[c] = false;
                }
                link[own] = 0.0;
                touched.clear();
            }
            if !moved {
                break;
            }
            any_move = true;
        }
        (comm, any_move)
    }

    /// Collapse communities into nodes. `comm` must be dense.
    fn aggregate(&self, comm: &[usize], k: usize) -> Level {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        let mut loops = vec![0.0; k];
        for i in 0..self.len() {
            loops[comm[i]] += self.loops[i];
            for &(j, w) in &self.adj[i] {
                if comm[i] == comm[j] {
                    loops[comm[i]] += w;
                } else {
                    adj[comm[i]].push((comm[j], w));
                }
            }
        }
        Level::new(adj, loops)
    }
}

/// Renumber labels densely in order of first appearance.
fn densify(labels: &mut [usize]) -> usize {
    let mut map = std::collections::HashMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

/// Multi-level Louvain. Node visit order is shuffled by `seed` at every
/// level; the result is deterministic for a given seed.
pub fn louvain(g: &MobilityGraph, seed: u64) -> Result<CommunityPartition> {
    if g.node_count() == 0 {
        return Err(Error::EmptyInput("louvain on an empty graph"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = Level::from_graph(g);
    let mut membership: Vec<usize> = (0..g.node_count()).collect();
    if level.two_m > 0.0 {
        loop {
            let (mut comm, moved) = level.local_moves(&mut rng);
            if !moved {
                break;
            }
            let k = densify(&mut comm);
            for m in membership.iter_mut() {
                *m = comm[*m];
            }
            if k == level.len() {
                break;
            }
            level = level.aggregate(&comm, k);
        }
    }
    let count = densify(&mut membership);
    let modularity = modularity(g, &membership)?;
    Ok(CommunityPartition {
        communities: membership,
        count,
        modularity,
    })
}
