//! Monte-Carlo sampling of clustering radii, information distances between
//! the resulting neighborhood partitions, and assembly of the final node set.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use rand::distributions::{Distribution, Uniform};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{self, ClusterParams, Clustering, HomeLocation, UserPoints};
use crate::error::{Error, Result};
use crate::geo::{degree_distance_sq, GeoPoint};
use crate::par::Exec;

/// Prior bounds for the home (`eps1`) and neighborhood (`eps2`) radii, in
/// degrees.
pub const EPS1_RANGE: (f64, f64) = (0.3, 1.0);
pub const EPS2_RANGE: (f64, f64) = (0.0, 0.15);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPair {
    pub pair_id: usize,
    pub eps1: f64,
    pub eps2: f64,
}

/// `count` independent draws of `eps1 ~ U(0.3, 1.0)`, `eps2 ~ U(0, 0.15)`.
/// A zero `eps2` is redrawn so both radii stay positive.
pub fn sample_pairs(count: usize, seed: u64) -> Result<Vec<EpsilonPair>> {
    if count == 0 {
        return Err(Error::config("mc-count", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d1 = Uniform::new_inclusive(EPS1_RANGE.0, EPS1_RANGE.1);
    let d2 = Uniform::new_inclusive(EPS2_RANGE.0, EPS2_RANGE.1);
    Ok((0..count)
        .map(|pair_id| {
            let eps1 = d1.sample(&mut rng);
            let mut eps2 = d2.sample(&mut rng);
            while eps2 <= 0.0 {
                eps2 = d2.sample(&mut rng);
            }
            EpsilonPair { pair_id, eps1, eps2 }
        })
        .collect())
}

/// Cluster sizes with noise folded into one extra cluster.
fn label_counts(labels: &[Option<usize>]) -> Vec<usize> {
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k + 1];
    for l in labels {
        counts[l.unwrap_or(k)] += 1;
    }
    counts.retain(|&c| c > 0);
    counts
}

/// Joint cluster sizes of two labelings, ordered by (label, label).
fn contingency(a: &[Option<usize>], b: &[Option<usize>]) -> Vec<(usize, usize, usize)> {
    let noise_a = a.iter().flatten().max().map_or(0, |m| m + 1);
    let noise_b = b.iter().flatten().max().map_or(0, |m| m + 1);
    let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *cells
            .entry((x.unwrap_or(noise_a), y.unwrap_or(noise_b)))
            .or_default() += 1;
    }
    let mut out: Vec<(usize, usize, usize)> = cells.into_iter().map(|((x, y), c)| (x, y, c)).collect();
    out.sort_unstable();
    out
}

fn marginal(labels: &[Option<usize>]) -> HashMap<usize, usize> {
    let noise = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut m = HashMap::new();
    for l in labels {
        *m.entry(l.unwrap_or(noise)).or_default() += 1;
    }
    m
}

/// Shannon entropy in nats of a labeling, noise counted as one cluster.
pub fn labels_entropy(labels: &[Option<usize>]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("entropy of an empty clustering"));
    }
    let n = labels.len() as f64;
    Ok(label_counts(labels)
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

pub fn labels_mutual_information(a: &[Option<usize>], b: &[Option<usize>]) -> Result<f64> {
    check_same(a, b)?;
    let n = a.len() as f64;
    let (ma, mb) = (marginal(a), marginal(b));
    let mut total = 0.0;
    for (x, y, c) in contingency(a, b) {
        let pxy = c as f64 / n;
        let px = ma[&x] as f64 / n;
        let py = mb[&y] as f64 / n;
        total += pxy * (pxy / (px * py)).ln();
    }
    Ok(total.max(0.0))
}

/// Variation of information in nats. Evaluated as the sum of the two
/// conditional entropies, which equals `H(a) + H(b) - 2 I(a, b)` and is
/// exactly zero for labelings that agree up to renaming.
pub fn labels_variation_of_information(a: &[Option<usize>], b: &[Option<usize>]) -> Result<f64> {
    check_same(a, b)?;
    Ok(vi_unchecked(a, b))
}

fn vi_unchecked(a: &[Option<usize>], b: &[Option<usize>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let n = a.len() as f64;
    let (ma, mb) = (marginal(a), marginal(b));
    // sorted terms make the sum independent of argument order
    let mut terms: Vec<f64> = contingency(a, b)
        .into_iter()
        .map(|(x, y, c)| {
            let marginals = (ma[&x] as f64).ln() + (mb[&y] as f64).ln();
            c as f64 / n * (marginals - 2.0 * (c as f64).ln())
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>().max(0.0)
}

fn check_same(a: &[Option<usize>], b: &[Option<usize>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::PointSetMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("clusterings over zero points"));
    }
    Ok(())
}

pub fn entropy(c: &Clustering) -> Result<f64> {
    labels_entropy(&c.labels)
}

pub fn mutual_information(c: &Clustering, c2: &Clustering) -> Result<f64> {
    labels_mutual_information(&c.labels, &c2.labels)
}

pub fn variation_of_information(c: &Clustering, c2: &Clustering) -> Result<f64> {
    labels_variation_of_information(&c.labels, &c2.labels)
}

/// Symmetric matrix of pairwise VI distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ViMatrix {
    size: usize,
    values: Vec<f64>,
}

impl ViMatrix {
    pub fn from_fn<F>(size: usize, exec: Exec, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        let rows = exec.map_range(size, |i| ((i + 1)..size).map(|j| f(i, j)).collect::<Vec<f64>>());
        let mut values = vec![0.0; size * size];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                values[i * size + j] = v;
                values[j * size + i] = v;
            }
        }
        ViMatrix { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// Mean distance from `i` to every other clustering.
    pub fn mean_row(&self, i: usize) -> f64 {
        if self.size < 2 {
            return 0.0;
        }
        let row = &self.values[i * self.size..(i + 1) * self.size];
        row.iter().sum::<f64>() / (self.size - 1) as f64
    }
}

/// Which end of the VI ranking counts as most informative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectOrder {
    /// Largest distances first.
    #[default]
    Desc,
    Asc,
}

impl std::str::FromStr for SelectOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desc" => Ok(SelectOrder::Desc),
            "asc" => Ok(SelectOrder::Asc),
            other => Err(Error::config("select-order", format!("expected asc|desc, got {other:?}"))),
        }
    }
}

/// Rank all unordered clustering pairs by VI, keep the top `percentile`
/// percent of pairs (at least one), and return the sorted ids of every
/// clustering in a kept pair. Equal distances keep lexicographic pair order.
pub fn select_top(vi: &ViMatrix, percentile: f64, order: SelectOrder) -> Result<Vec<usize>> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::config("percentile", format!("{percentile} not in (0, 100]")));
    }
    let m = vi.size();
    if m < 2 {
        return Err(Error::EmptyInput("select_top needs at least two clusterings"));
    }
    let mut pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .collect();
    let by_vi = |a: &(usize, usize), b: &(usize, usize)| {
        let (x, y) = (vi.get(a.0, a.1), vi.get(b.0, b.1));
        match order {
            SelectOrder::Desc => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
            SelectOrder::Asc => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        }
    };
    pairs.sort_by(by_vi);
    let keep = ((pairs.len() as f64 * percentile / 100.0).floor() as usize).max(1);
    let mut chosen: Vec<usize> = pairs[..keep].iter().flat_map(|&(i, j)| [i, j]).collect();
    chosen.sort_unstable();
    chosen.dedup();
    Ok(chosen)
}

/// A neighborhood center and the run that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeCenter {
    pub point: GeoPoint,
    pub pair_id: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub centers: Vec<NodeCenter>,
    pub merge_radius: f64,
}

impl NodeSet {
    pub fn points(&self) -> Vec<GeoPoint> {
        self.centers.iter().map(|c| c.point).collect()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Greedy union of candidate centers in input order: a candidate within
/// `merge_radius` degrees of an accepted center is dropped.
pub fn assemble_nodes(candidates: &[NodeCenter], merge_radius: f64) -> Result<NodeSet> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("assemble_nodes: no neighborhood centers"));
    }
    if !(merge_radius.is_finite() && merge_radius >= 0.0) {
        return Err(Error::config("merge-radius", format!("{merge_radius} is not a non-negative real")));
    }
    let r_sq = merge_radius * merge_radius;
    // cell side slightly above the radius: conflicts lie in the 3x3 block
    let inv_cell = if merge_radius > 0.0 {
        1.0 / (merge_radius * (1.0 + 1e-6))
    } else {
        1.0
    };
    let key = |p: &GeoPoint| ((p.lat() * inv_cell).floor() as i64, (p.lon() * inv_cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut accepted: Vec<NodeCenter> = Vec::new();
    for cand in candidates {
        let (cx, cy) = key(&cand.point);
        let clash = (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                grid.get(&(cx + dx, cy + dy)).is_some_and(|bucket| {
                    bucket
                        .iter()
                        .any(|&a| degree_distance_sq(&accepted[a].point, &cand.point) <= r_sq)
                })
            })
        });
        if !clash {
            grid.entry((cx, cy)).or_default().push(accepted.len());
            accepted.push(*cand);
        }
    }
    Ok(NodeSet {
        centers: accepted,
        merge_radius,
    })
}

/// Homes and neighborhoods for one radius pair.
#[derive(Debug, Clone)]
pub struct TwoStage {
    pub pair: EpsilonPair,
    /// Index into the `users` slice for each home.
    pub home_users: Vec<usize>,
    pub homes: Vec<HomeLocation>,
    pub neighborhoods: Clustering,
}

impl TwoStage {
    pub fn centers(&self) -> Vec<NodeCenter> {
        self.neighborhoods
            .centroids
            .iter()
            .enumerate()
            .map(|(cluster, &point)| NodeCenter {
                point,
                pair_id: self.pair.pair_id,
                cluster,
            })
            .collect()
    }
}

/// Home inference with `eps1`, then neighborhood clustering of the homes
/// with `eps2`, both at `min_pts`.
pub fn two_stage(users: &[UserPoints], pair: &EpsilonPair, min_pts: usize) -> Result<TwoStage> {
    let p1 = ClusterParams::new(pair.eps1, min_pts)?;
    let p2 = ClusterParams::new(pair.eps2, min_pts)?;
    let mut home_users = Vec::new();
    let mut homes = Vec::new();
    for (i, u) in users.iter().enumerate() {
        if let Some(h) = cluster::infer_home(&u.user_id, &u.points, &p1) {
            home_users.push(i);
            homes.push(h);
        }
    }
    let neighborhoods = if homes.is_empty() {
        Clustering::empty()
    } else {
        cluster::neighborhoods(&homes, &p2)?
    };
    Ok(TwoStage {
        pair: *pair,
        home_users,
        homes,
        neighborhoods,
    })
}

/// Run [`two_stage`] for every pair; output follows `pairs` order.
pub fn run_pairs(users: &[UserPoints], pairs: &[EpsilonPair], min_pts: usize, exec: Exec) -> Result<Vec<TwoStage>> {
    exec.map(pairs, |p| two_stage(users, p, min_pts))
        .into_iter()
        .collect()
}

/// VI between two runs over the users homed in both. Zero when they share
/// no users.
pub fn run_distance(a: &TwoStage, b: &TwoStage) -> f64 {
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.home_users.len() && j < b.home_users.len() {
        match a.home_users[i].cmp(&b.home_users[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                la.push(a.neighborhoods.labels[i]);
                lb.push(b.neighborhoods.labels[j]);
                i += 1;
                j += 1;
            }
        }
    }
    vi_unchecked(&la, &lb)
}

pub fn run_vi_matrix(runs: &[TwoStage], exec: Exec) -> ViMatrix {
    ViMatrix::from_fn(runs.len(), exec, |i, j| run_distance(&runs[i], &runs[j]))
}

/// Uniform sample without replacement of `round(frac * n)` items, kept in
/// input order.
pub fn sample_fraction<T: Clone>(items: &[T], frac: f64, seed: u64) -> Result<Vec<T>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::config("vi-sample-frac", format!("{frac} not in (0, 1]")));
    }
    let k = ((items.len() as f64 * frac).round() as usize).min(items.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, items.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub pair_id: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub n_homes: usize,
    pub n_neighborhoods: usize,
    pub mean_vi: f64,
    pub selected: bool,
}

pub fn selection_rows(runs: &[TwoStage], vi: &ViMatrix, selected: &[usize]) -> Vec<SelectionRow> {
    runs.iter()
        .enumerate()
        .map(|(i, r)| SelectionRow {
            pair_id: r.pair.pair_id,
            eps1: r.pair.eps1,
            eps2: r.pair.eps2,
            n_homes: r.homes.len(),
            n_neighborhoods: r.neighborhoods.num_clusters(),
            mean_vi: vi.mean_row(i),
            selected: selected.binary_search(&i).is_ok(),
        })
        .collect()
}

pub fn write_selection_csv<W: Write>(w: W, rows: &[SelectionRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<selection csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn lab(v: &[i64]) -> Vec<Option<usize>> {
        v.iter().map(|&x| (x >= 0).then_some(x as usize)).collect()
    }

    /// Entropy, MI and VI straight from the definitions, with probabilities
    /// as `f64` and no shared helpers.
    fn direct(a: &[Option<usize>], b: &[Option<usize>]) -> (f64, f64, f64, f64) {
        let n = a.len() as f64;
        let key = |l: &Option<usize>| l.map_or(-1i64, |k| k as i64);
        let mut pa: HashMap<i64, f64> = HashMap::new();
        let mut pb: HashMap<i64, f64> = HashMap::new();
        let mut pab: HashMap<(i64, i64), f64> = HashMap::new();
        for (x, y) in a.iter().zip(b) {
            *pa.entry(key(x)).or_default() += 1.0 / n;
            *pb.entry(key(y)).or_default() += 1.0 / n;
            *pab.entry((key(x), key(y))).or_default() += 1.0 / n;
        }
        let h = |m: &HashMap<i64, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
        let i: f64 = pab.iter().map(|((x, y), p)| p * (p / (pa[x] * pb[y])).ln()).sum();
        let (ha, hb) = (h(&pa), h(&pb));
        (ha, hb, i, ha + hb - 2.0 * i)
    }

    #[test]
    fn sample_pairs_bounds_and_determinism() {
        let a = sample_pairs(500, 7).unwrap();
        assert_eq!(a.len(), 500);
        for p in &a {
            assert!((0.3..=1.0).contains(&p.eps1));
            assert!(p.eps2 > 0.0 && p.eps2 <= 0.15);
            assert!(p.eps1 > p.eps2);
        }
        assert_eq!(a, sample_pairs(500, 7).unwrap());
        assert_ne!(a, sample_pairs(500, 8).unwrap());
        assert!(sample_pairs(0, 1).is_err());
    }

    #[test]
    fn entropy_hand_values() {
        assert_eq!(labels_entropy(&lab(&[0; 10])).unwrap(), 0.0);
        assert!((labels_entropy(&lab(&[0, 0, 1, 1])).unwrap() - LN_2).abs() < 1e-12);
        assert!((labels_entropy(&lab(&[0, 1, 2, 3])).unwrap() - 4f64.ln()).abs() < 1e-12);
        // noise counts as one more cluster
        assert!((labels_entropy(&lab(&[0, 0, -1, -1])).unwrap() - LN_2).abs() < 1e-12);
        assert!(labels_entropy(&[]).is_err());
    }

    #[test]
    fn mutual_information_hand_values() {
        let c = lab(&[0, 0, 1, 1]);
        let h = labels_entropy(&c).unwrap();
        assert!((labels_mutual_information(&c, &c).unwrap() - h).abs() < 1e-12);
        let crossed = lab(&[0, 1, 0, 1]);
        assert!(labels_mutual_information(&c, &crossed).unwrap().abs() < 1e-12);
        assert!(labels_mutual_information(&c, &lab(&[0; 4])).unwrap().abs() < 1e-12);
        assert!(matches!(
            labels_mutual_information(&c, &lab(&[0; 3])),
            Err(Error::PointSetMismatch(4, 3))
        ));
    }

    #[test]
    fn vi_hand_values() {
        let c = lab(&[0, 0, 1, 1]);
        assert_eq!(labels_variation_of_information(&c, &c).unwrap(), 0.0);
        assert_eq!(labels_variation_of_information(&c, &lab(&[1, 1, 0, 0])).unwrap(), 0.0);
        let crossed = lab(&[0, 1, 0, 1]);
        assert!((labels_variation_of_information(&c, &crossed).unwrap() - 2.0 * LN_2).abs() < 1e-12);
        let v = labels_variation_of_information(&lab(&[0; 4]), &lab(&[0, 1, 2, 3])).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
    }

    fn vi_of(rows: &[&[f64]]) -> ViMatrix {
        let m = rows.len();
        ViMatrix::from_fn(m, Exec::Sequential, |i, j| rows[i][j])
    }

    #[test]
    fn select_top_cases() {
        let two = vi_of(&[&[0.0, 0.3], &[0.3, 0.0]]);
        assert_eq!(select_top(&two, 100.0, SelectOrder::Desc).unwrap(), vec![0, 1]);

        let three = vi_of(&[&[0.0, 0.1, 2.0], &[0.1, 0.0, 0.2], &[2.0, 0.2, 0.0]]);
        assert_eq!(select_top(&three, 34.0, SelectOrder::Desc).unwrap(), vec![0, 2]);
        assert_eq!(select_top(&three, 34.0, SelectOrder::Asc).unwrap(), vec![0, 1]);

        let flat = ViMatrix::from_fn(10, Exec::Sequential, |_, _| 1.0);
        // 45 pairs at 5% keeps 2: (0,1) and (0,2)
        assert_eq!(select_top(&flat, 5.0, SelectOrder::Desc).unwrap(), vec![0, 1, 2]);

        assert!(select_top(&vi_of(&[&[0.0]]), 5.0, SelectOrder::Desc).is_err());
        assert!(select_top(&two, 0.0, SelectOrder::Desc).is_err());
        assert!(select_top(&two, 100.5, SelectOrder::Desc).is_err());
    }

    fn center(lat: f64, lon: f64, pair_id: usize) -> NodeCenter {
        NodeCenter {
            point: GeoPoint::new(lat, lon).unwrap(),
            pair_id,
            cluster: 0,
        }
    }

    #[test]
    fn assemble_cases() {
        let three = [center(32.5, -117.0, 0), center(32.7, -117.0, 0), center(32.9, -117.0, 0)];
        assert_eq!(assemble_nodes(&three, 0.001).unwrap().len(), 3);

        let dup = [center(32.5, -117.0, 0), center(32.5, -117.0, 1)];
        let ns = assemble_nodes(&dup, 0.001).unwrap();
        assert_eq!(ns.len(), 1);
        assert_eq!(ns.centers[0].pair_id, 0);

        let near = [center(32.5, -117.0, 0), center(32.5005, -117.0, 1)];
        assert_eq!(assemble_nodes(&near, 0.001).unwrap().len(), 1);
        assert_eq!(assemble_nodes(&dup, 0.0).unwrap().len(), 1);
        assert!(assemble_nodes(&[], 0.001).is_err());
    }

    #[test]
    fn sample_fraction_is_seeded_subset() {
        let items: Vec<usize> = (0..1000).collect();
        let a = sample_fraction(&items, 0.01, 3).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_fraction(&items, 0.01, 3).unwrap());
        assert!(sample_fraction(&items, 0.0, 3).is_err());
    }

    #[test]
    fn run_distance_uses_common_users() {
        let mk = |users: Vec<usize>, labels: Vec<Option<usize>>| TwoStage {
            pair: EpsilonPair { pair_id: 0, eps1: 0.5, eps2: 0.1 },
            home_users: users,
            homes: Vec::new(),
            neighborhoods: Clustering { labels, centroids: vec![], sizes: vec![], core: vec![] },
        };
        let a = mk(vec![0, 1, 2, 3, 9], lab(&[0, 0, 1, 1, 4]));
        let b = mk(vec![0, 1, 2, 3, 7], lab(&[0, 1, 0, 1, 0]));
        assert!((run_distance(&a, &b) - 2.0 * LN_2).abs() < 1e-12);
        let c = mk(vec![5], lab(&[0]));
        assert_eq!(run_distance(&a, &c), 0.0);
    }

    fn labeling(n: usize) -> impl Strategy<Value = Vec<Option<usize>>> {
        prop::collection::vec(prop::option::weighted(0.85, 0usize..6), n)
    }

    fn triple() -> impl Strategy<Value = (Vec<Option<usize>>, Vec<Option<usize>>, Vec<Option<usize>>)> {
        (1usize..100).prop_flat_map(|n| (labeling(n), labeling(n), labeling(n)))
    }

    proptest! {
        #[test]
        fn agrees_with_direct_definitions((a, b, _c) in triple()) {
            let (ha, hb, i, vi) = direct(&a, &b);
            prop_assert!((labels_entropy(&a).unwrap() - ha).abs() < 1e-12);
            prop_assert!((labels_entropy(&b).unwrap() - hb).abs() < 1e-12);
            prop_assert!((labels_mutual_information(&a, &b).unwrap() - i).abs() < 1e-12);
            prop_assert!((labels_variation_of_information(&a, &b).unwrap() - vi).abs() < 1e-12);
        }

        #[test]
        fn vi_metric_axioms((a, b, c) in triple()) {
            let d = |x: &[Option<usize>], y: &[Option<usize>]| labels_variation_of_information(x, y).unwrap();
            let (ab, ba, bc, ac) = (d(&a, &b), d(&b, &a), d(&b, &c), d(&a, &c));
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(ab <= (a.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn assembled_nodes_are_separated(raw in prop::collection::vec((32.0f64..32.05, -117.05f64..-117.0), 1..200), r in 0.0f64..0.01) {
            let cands: Vec<NodeCenter> = raw.iter().enumerate().map(|(i, &(a, b))| center(a, b, i)).collect();
            let ns = assemble_nodes(&cands, r).unwrap();
            for (i, x) in ns.centers.iter().enumerate() {
                for y in &ns.centers[i + 1..] {
                    prop_assert!(degree_distance_sq(&x.point, &y.point) > r * r);
                }
            }
            // every dropped candidate is near some accepted center
            for c in &cands {
                prop_assert!(ns.centers.iter().any(|a| degree_distance_sq(&a.point, &c.point) <= r * r));
            }
        }
    }
}
