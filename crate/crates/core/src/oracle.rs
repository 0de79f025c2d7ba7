//! Direct-definition reference implementations for small instances. They
//! are quadratic to exponential on purpose and refuse inputs above their
//! size bounds.

use crate::centrality::CostMode;
use crate::cluster::{ClusterParams, Clustering};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::graph::MobilityGraph;

pub const DBSCAN_ORACLE_MAX_POINTS: usize = 200;
pub const BETWEENNESS_ORACLE_MAX_NODES: usize = 50;
pub const MODULARITY_ORACLE_MAX_NODES: usize = 8;

fn bound(size: usize, limit: usize) -> Result<()> {
    if size > limit {
        return Err(Error::OracleBound { size, limit });
    }
    Ok(())
}

/// DBSCAN as density-connectivity closure over the full distance matrix.
///
/// Clusters are the connected components of core points under the
/// epsilon relation; a border point joins the adjacent component whose
/// smallest core index is lowest. Labels are then renumbered by first
/// member.
pub fn oracle_dbscan(points: &[GeoPoint], params: &ClusterParams) -> Result<Clustering> {
    bound(points.len(), DBSCAN_ORACLE_MAX_POINTS)?;
    let n = points.len();
    let eps_sq = params.epsilon() * params.epsilon();
    let near = |i: usize, j: usize| {
        let dlat = points[i].lat() - points[j].lat();
        let dlon = points[i].lon() - points[j].lon();
        dlat * dlat + dlon * dlon <= eps_sq
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= params.min_pts())
        .collect();

    // component id = smallest core index reachable through core links
    let mut comp: Vec<Option<usize>> = (0..n).map(|i| core[i].then_some(i)).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near(i, j) && comp[j] < comp[i] {
                    comp[i] = comp[j];
                    changed = true;
                }
            }
        }
    }
    let raw: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if core[i] {
                comp[i]
            } else {
                (0..n).filter(|&j| core[j] && near(i, j)).filter_map(|j| comp[j]).min()
            }
        })
        .collect();

    let mut order: Vec<usize> = Vec::new();
    let labels: Vec<Option<usize>> = raw
        .iter()
        .map(|r| {
            r.map(|c| match order.iter().position(|&x| x == c) {
                Some(k) => k,
                None => {
                    order.push(c);
                    order.len() - 1
                }
            })
        })
        .collect();
    let k = order.len();
    let mut sizes = vec![0; k];
    let mut lat = vec![0.0; k];
    let mut lon = vec![0.0; k];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            sizes[c] += 1;
            lat[c] += points[i].lat();
            lon[c] += points[i].lon();
        }
    }
    let centroids = (0..k)
        .map(|c| GeoPoint::new(lat[c] / sizes[c] as f64, lon[c] / sizes[c] as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(Clustering {
        labels,
        centroids,
        sizes,
        core,
    })
}

fn same_length(a: f64, b: f64) -> bool {
    (a - b).abs() <= crate::centrality::PATH_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Betweenness from all-pairs shortest paths: Floyd-Warshall distances,
/// shortest-path counts per pair, and for each `v` the sum over ordered
/// pairs `(s, t)` of `sigma(s, v) sigma(v, t) / sigma(s, t)` whenever `v`
/// lies on a shortest `s`-`t` path.
pub fn oracle_betweenness(g: &MobilityGraph, mode: CostMode) -> Result<Vec<f64>> {
    let n = g.node_count();
    bound(n, BETWEENNESS_ORACLE_MAX_NODES)?;
    let mut cost = vec![vec![f64::INFINITY; n]; n];
    for e in g.edges() {
        cost[e.src][e.dst] = mode.cost(e.weight);
    }
    let mut dist = cost.clone();
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = dist[i][k] + dist[k][j];
                if via < dist[i][j] {
                    dist[i][j] = via;
                }
            }
        }
    }

    // sigma[s][t]: number of shortest s-t paths, by DP in order of distance
    let mut sigma = vec![vec![0.0f64; n]; n];
    for s in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&t| dist[s][t].is_finite()).collect();
        order.sort_by(|&a, &b| dist[s][a].total_cmp(&dist[s][b]));
        sigma[s][s] = 1.0;
        for &t in &order {
            if t == s {
                continue;
            }
            sigma[s][t] = (0..n)
                .filter(|&u| u != t && cost[u][t].is_finite() && dist[s][u].is_finite())
                .filter(|&u| same_length(dist[s][u] + cost[u][t], dist[s][t]))
                .map(|u| sigma[s][u])
                .sum();
        }
    }

    let mut bc = vec![0.0; n];
    for (v, score) in bc.iter_mut().enumerate() {
        for s in 0..n {
            for t in 0..n {
                if s == t || s == v || t == v || !dist[s][t].is_finite() {
                    continue;
                }
                if dist[s][v].is_finite()
                    && dist[v][t].is_finite()
                    && same_length(dist[s][v] + dist[v][t], dist[s][t])
                {
                    *score += sigma[s][v] * sigma[v][t] / sigma[s][t];
                }
            }
        }
    }
    Ok(bc)
}

/// Modularity straight from the double sum over node pairs of the
/// symmetrized adjacency matrix.
pub fn oracle_modularity(g: &MobilityGraph, partition: &[usize]) -> f64 {
    let n = g.node_count();
    let mut a = vec![vec![0.0; n]; n];
    for e in g.edges() {
        a[e.src][e.dst] += e.weight as f64;
        a[e.dst][e.src] += e.weight as f64;
    }
    let k: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if partition[i] == partition[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Every set partition of `0..n` as a restricted growth string.
fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    fn rec(i: usize, max: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == current.len() {
            out.push(current.clone());
            return;
        }
        for label in 0..=max + 1 {
            current[i] = label;
            rec(i + 1, max.max(label), current, out);
        }
    }
    if n == 0 {
        out.push(Vec::new());
    } else {
        rec(1, 0, &mut current, &mut out);
    }
    out
}

/// Exhaustive search for the modularity-maximizing partition. Returns the
/// first optimal partition in restricted-growth order and its Q.
pub fn oracle_modularity_argmax(g: &MobilityGraph) -> Result<(Vec<usize>, f64)> {
    bound(g.node_count(), MODULARITY_ORACLE_MAX_NODES)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in set_partitions(g.node_count()) {
        let q = oracle_modularity(g, &p);
        if best.as_ref().is_none_or(|(_, b)| q > *b + 1e-12) {
            best = Some((p, q));
        }
    }
    Ok(best.expect("at least one partition"))
}
