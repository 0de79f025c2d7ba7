//! DBSCAN in degree space, per-user home inference and the neighborhood
//! partition over inferred homes.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{degree_distance_sq, GeoPoint};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    epsilon: f64,
    min_pts: usize,
}

impl ClusterParams {
    pub const DEFAULT_MIN_PTS: usize = 3;

    pub fn new(epsilon: f64, min_pts: usize) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::config("epsilon", format!("{epsilon} is not a positive real")));
        }
        if min_pts == 0 {
            return Err(Error::config("min_pts", "must be at least 1"));
        }
        Ok(ClusterParams { epsilon, min_pts })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn min_pts(&self) -> usize {
        self.min_pts
    }
}

/// A labeling of points into clusters plus noise.
///
/// Cluster ids are canonical: cluster `k` is the `k`-th distinct cluster met
/// when scanning points in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<Option<usize>>,
    pub centroids: Vec<GeoPoint>,
    pub sizes: Vec<usize>,
    pub core: Vec<bool>,
}

impl Clustering {
    pub fn empty() -> Self {
        Clustering {
            labels: Vec::new(),
            centroids: Vec::new(),
            sizes: Vec::new(),
            core: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Member indices per cluster, in input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(k) = l {
                out[*k].push(i);
            }
        }
        out
    }

    /// Build from raw labels: relabels clusters canonically and computes
    /// sizes and centroids.
    pub fn from_labels(points: &[GeoPoint], raw: &[Option<usize>], core: Vec<bool>) -> Self {
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let labels: Vec<Option<usize>> = raw
            .iter()
            .map(|l| {
                l.map(|k| {
                    let next = remap.len();
                    *remap.entry(k).or_insert(next)
                })
            })
            .collect();
        let k = remap.len();
        let mut sums = vec![(0.0f64, 0.0f64); k];
        let mut sizes = vec![0usize; k];
        for (p, l) in points.iter().zip(&labels) {
            if let Some(c) = l {
                sums[*c].0 += p.lat();
                sums[*c].1 += p.lon();
                sizes[*c] += 1;
            }
        }
        let centroids = sums
            .iter()
            .zip(&sizes)
            .map(|(&(lat, lon), &n)| {
                GeoPoint::new(lat / n as f64, lon / n as f64).expect("mean of valid points")
            })
            .collect();
        Clustering {
            labels,
            centroids,
            sizes,
            core,
        }
    }
}

/// Uniform grid over degree space with cells slightly wider than epsilon, so
/// every epsilon-neighbor lies in the 3x3 block around a point's cell.
struct Grid {
    inv_cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[GeoPoint], eps: f64) -> Self {
        let inv_cell = 1.0 / (eps * (1.0 + 1e-6));
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(inv_cell, p)).or_default().push(i);
        }
        Grid { inv_cell, cells }
    }

    #[inline]
    fn key(inv_cell: f64, p: &GeoPoint) -> (i64, i64) {
        (
            (p.lat() * inv_cell).floor() as i64,
            (p.lon() * inv_cell).floor() as i64,
        )
    }

    /// Calls `f` for every point within `eps` of `points[i]`, itself included.
    /// Stops early when `f` returns false.
    fn for_neighbors<F: FnMut(usize) -> bool>(&self, points: &[GeoPoint], i: usize, eps_sq: f64, mut f: F) {
        let p = &points[i];
        let (cx, cy) = Self::key(self.inv_cell, p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if degree_distance_sq(p, &points[j]) <= eps_sq && !f(j) {
                        return;
                    }
                }
            }
        }
    }
}

pub fn dbscan(points: &[GeoPoint], params: &ClusterParams) -> Clustering {
    dbscan_with(points, params, Exec::Sequential)
}

/// DBSCAN with the core-point census run under `exec`. The expansion is
/// sequential, so the result is identical for every strategy.
///
/// A point is core when at least `min_pts` points, itself included, lie
/// within `epsilon`. A border point reachable from several clusters joins
/// the one found first in the input-order scan.
pub fn dbscan_with(points: &[GeoPoint], params: &ClusterParams, exec: Exec) -> Clustering {
    if points.is_empty() {
        return Clustering::empty();
    }
    let eps_sq = params.epsilon * params.epsilon;
    let grid = Grid::new(points, params.epsilon);
    let min_pts = params.min_pts;

    let core: Vec<bool> = exec.map_range(points.len(), |i| {
        let mut count = 0;
        grid.for_neighbors(points, i, eps_sq, |_| {
            count += 1;
            count < min_pts
        });
        count >= min_pts
    });

    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for seed in 0..points.len() {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        let c = next;
        next += 1;
        labels[seed] = Some(c);
        stack.push(seed);
        while let Some(p) = stack.pop() {
            grid.for_neighbors(points, p, eps_sq, |q| {
                if labels[q].is_none() {
                    labels[q] = Some(c);
                    if core[q] {
                        stack.push(q);
                    }
                }
                true
            });
        }
    }
    Clustering::from_labels(points, &labels, core)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeLocation {
    pub user_id: String,
    pub center: GeoPoint,
    /// Night events in the winning cluster.
    pub support: usize,
}

/// Centroid of the largest cluster among `points`, or `None` when no
/// cluster of at least `min_pts` members forms. Equal sizes go to the
/// lower cluster id.
pub fn home_from_points(points: &[GeoPoint], params: &ClusterParams) -> Option<(GeoPoint, usize)> {
    let c = dbscan(points, params);
    let mut best: Option<usize> = None;
    for (k, &size) in c.sizes.iter().enumerate() {
        if size < params.min_pts {
            continue;
        }
        if best.is_none_or(|b| size > c.sizes[b]) {
            best = Some(k);
        }
    }
    best.map(|k| (c.centroids[k], c.sizes[k]))
}

pub fn infer_home(user_id: &str, night_points: &[GeoPoint], params: &ClusterParams) -> Option<HomeLocation> {
    home_from_points(night_points, params).map(|(center, support)| HomeLocation {
        user_id: user_id.to_string(),
        center,
        support,
    })
}

/// Night locations for one user.
#[derive(Debug, Clone)]
pub struct UserPoints {
    pub user_id: String,
    pub points: Vec<GeoPoint>,
}

/// Home inference for every user; users without a qualifying cluster are
/// dropped. Output follows input order.
pub fn infer_homes(users: &[UserPoints], params: &ClusterParams, exec: Exec) -> Vec<HomeLocation> {
    exec.map(users, |u| infer_home(&u.user_id, &u.points, params))
        .into_iter()
        .flatten()
        .collect()
}

/// Density clusters of home centers. Noise homes belong to no neighborhood.
pub fn neighborhoods(homes: &[HomeLocation], params: &ClusterParams) -> Result<Clustering> {
    if homes.is_empty() {
        return Err(Error::EmptyInput("neighborhoods: no homes"));
    }
    let points: Vec<GeoPoint> = homes.iter().map(|h| h.center).collect();
    Ok(dbscan(&points, params))
}

/// Debug dump: `point_index,label,lat,lon`, noise labeled -1.
pub fn write_clustering_csv<W: Write>(w: W, points: &[GeoPoint], c: &Clustering) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["point_index", "label", "lat", "lon"])?;
    for (i, (p, l)) in points.iter().zip(&c.labels).enumerate() {
        let label = l.map_or(-1, |k| k as i64);
        wtr.write_record([
            i.to_string(),
            label.to_string(),
            p.lat().to_string(),
            p.lon().to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<clustering csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_dbscan;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn params(eps: f64, min_pts: usize) -> ClusterParams {
        ClusterParams::new(eps, min_pts).unwrap()
    }

    #[test]
    fn params_validated() {
        assert!(ClusterParams::new(0.0, 3).is_err());
        assert!(ClusterParams::new(-1.0, 3).is_err());
        assert!(ClusterParams::new(0.1, 0).is_err());
    }

    #[test]
    fn empty_input() {
        let c = dbscan(&[], &params(0.1, 3));
        assert!(c.is_empty());
        assert_eq!(c.num_clusters(), 0);
    }

    #[test]
    fn coincident_points_form_one_cluster() {
        let pts = vec![pt(32.5, -117.0); 3];
        let c = dbscan(&pts, &params(1e-9, 3));
        assert_eq!(c.sizes, vec![3]);
        assert_eq!(c.labels, vec![Some(0); 3]);
    }

    fn two_groups() -> Vec<GeoPoint> {
        let mut pts = Vec::new();
        for base in [0.0, 1.0] {
            for (dx, dy) in [(0.0, 0.0), (0.01, 0.0), (0.0, 0.01), (0.01, 0.01)] {
                pts.push(pt(32.0 + base + dx, -117.0 + dy));
            }
        }
        pts
    }

    #[test]
    fn two_separated_groups() {
        let pts = two_groups();
        let p = params(0.05, 3);
        let c = dbscan(&pts, &p);
        assert_eq!(c.num_clusters(), 2);
        assert_eq!(c, oracle_dbscan(&pts, &p).unwrap());
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // two cores on either side of a shared border point
        let pts = vec![
            pt(0.0, 0.0),
            pt(0.0, 0.1),
            pt(0.0, 0.2),
            pt(0.0, 0.3),
            pt(0.0, 0.4),
        ];
        let c = dbscan(&pts, &params(0.1 + 1e-9, 3));
        assert_eq!(c, oracle_dbscan(&pts, &params(0.1 + 1e-9, 3)).unwrap());
        assert_eq!(c.num_clusters(), 1);
    }

    #[test]
    fn home_cases() {
        let p = params(0.3, 3);
        let home = infer_home("u", &vec![pt(32.5, -117.0); 5], &p).unwrap();
        assert_eq!(home.center, pt(32.5, -117.0));
        assert_eq!(home.support, 5);

        assert!(infer_home("u", &[pt(32.5, -117.0), pt(32.5, -117.0)], &p).is_none());

        // sizes 3 and 5, far apart
        let mut pts = vec![pt(10.0, 10.0); 3];
        pts.extend(vec![pt(20.0, 20.0); 5]);
        let home = infer_home("u", &pts, &p).unwrap();
        assert_eq!(home.support, 5);
        assert_eq!(home.center, pt(20.0, 20.0));

        // equal sizes: the cluster whose first member comes first
        let mut pts = vec![pt(20.0, 20.0); 3];
        pts.extend(vec![pt(10.0, 10.0); 3]);
        assert_eq!(infer_home("u", &pts, &p).unwrap().center, pt(20.0, 20.0));
    }

    #[test]
    fn neighborhood_cases() {
        let home = |lat: f64, lon: f64| HomeLocation {
            user_id: "u".into(),
            center: pt(lat, lon),
            support: 3,
        };
        assert!(neighborhoods(&[], &params(0.1, 3)).is_err());
        let same: Vec<_> = (0..4).map(|_| home(32.5, -117.0)).collect();
        assert_eq!(neighborhoods(&same, &params(0.01, 3)).unwrap().num_clusters(), 1);
        let mut two: Vec<_> = (0..4).map(|i| home(32.5 + 0.001 * i as f64, -117.0)).collect();
        two.extend((0..4).map(|i| home(32.9 + 0.001 * i as f64, -117.0)));
        let c = neighborhoods(&two, &params(0.01, 3)).unwrap();
        assert_eq!(c.num_clusters(), 2);
        let pts: Vec<_> = two.iter().map(|h| h.center).collect();
        assert_eq!(c, oracle_dbscan(&pts, &params(0.01, 3)).unwrap());
        let scattered = [home(32.5, -117.0), home(32.9, -116.9)];
        let c = neighborhoods(&scattered, &params(0.01, 3)).unwrap();
        assert_eq!(c.num_clusters(), 0);
        assert_eq!(c.noise_count(), 2);
    }

    #[test]
    fn debug_csv_dump() {
        let pts = vec![pt(1.0, 1.0), pt(1.0, 1.0), pt(5.0, 5.0)];
        let c = dbscan(&pts, &params(0.1, 2));
        let mut buf = Vec::new();
        write_clustering_csv(&mut buf, &pts, &c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "point_index,label,lat,lon\n0,0,1,1\n1,0,1,1\n2,-1,5,5\n");
    }

    fn instance() -> impl Strategy<Value = (Vec<GeoPoint>, f64, usize)> {
        (
            prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..120),
            0.01f64..0.2,
            1usize..6,
        )
            .prop_map(|(raw, eps, m)| (raw.into_iter().map(|(a, b)| pt(a, b)).collect(), eps, m))
    }

    fn as_sets(c: &Clustering) -> Vec<Vec<usize>> {
        let mut m = c.members();
        m.sort();
        m
    }

    proptest! {
        #[test]
        fn matches_oracle((pts, eps, m) in instance()) {
            let p = params(eps, m);
            prop_assert_eq!(dbscan(&pts, &p), oracle_dbscan(&pts, &p).unwrap());
        }

        #[test]
        fn parallel_census_is_identical((pts, eps, m) in instance()) {
            let p = params(eps, m);
            prop_assert_eq!(dbscan_with(&pts, &p, Exec::Parallel), dbscan(&pts, &p));
        }

        #[test]
        fn permutation_invariant_up_to_relabeling((pts, eps, m) in instance(), rot in 0usize..100) {
            let p = params(eps, m);
            let a = dbscan(&pts, &p);
            let n = pts.len().max(1);
            let perm: Vec<usize> = (0..pts.len()).rev().map(|i| (i + rot) % n).collect();
            let shuffled: Vec<GeoPoint> = perm.iter().map(|&i| pts[i]).collect();
            let b = dbscan(&shuffled, &p);
            // cores and their clusters agree exactly; borders may be shared
            let core_sets = |c: &Clustering, idx: &dyn Fn(usize) -> usize| {
                let mut sets: Vec<Vec<usize>> = c.members().into_iter()
                    .map(|mem| { let mut v: Vec<usize> = mem.into_iter().filter(|&i| c.core[i]).map(idx).collect(); v.sort(); v })
                    .collect();
                sets.sort();
                sets
            };
            prop_assert_eq!(core_sets(&a, &|i| i), core_sets(&b, &|i| perm[i]));
            for i in 0..pts.len() {
                prop_assert_eq!(a.labels[perm[i]].is_some(), b.labels[i].is_some());
            }
        }

        #[test]
        fn members_near_a_core((pts, eps, m) in instance()) {
            let p = params(eps, m);
            let c = dbscan(&pts, &p);
            prop_assert_eq!(c.sizes.iter().sum::<usize>() + c.noise_count(), pts.len());
            for (k, mem) in c.members().iter().enumerate() {
                prop_assert!(mem.iter().any(|&i| c.core[i]));
                for &i in mem {
                    prop_assert!(mem.iter().any(|&j| c.core[j] && c.labels[j] == Some(k)
                        && degree_distance_sq(&pts[i], &pts[j]) <= eps * eps));
                }
            }
        }

        #[test]
        fn huge_epsilon_single_cluster((pts, _eps, m) in instance()) {
            prop_assume!(pts.len() >= m);
            let c = dbscan(&pts, &params(10.0, m));
            prop_assert_eq!(as_sets(&c), vec![(0..pts.len()).collect::<Vec<_>>()]);
        }
    }
}
