#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mobgraph::community::modularity;
use mobgraph::geo::GeoPoint;
use mobgraph::graph::MobilityGraph;
use mobgraph::pipeline::{self, PipelineConfig, Stage};
use mobgraph::synth::{generate, normalized_mutual_information, GroundTruth, SynthConfig};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct NodeTableRow {
    pub id: usize,
    pub lat: f64,
    pub lon: f64,
    pub component: usize,
    pub community: usize,
    pub in_degree: u64,
    pub out_degree: u64,
    pub betweenness: f64,
}

#[derive(Debug, Deserialize)]
pub struct EdgeRow {
    pub src: usize,
    pub dst: usize,
    pub weight: u64,
}

#[derive(Debug, Deserialize)]
pub struct HomeNodeRow {
    pub user_id: String,
    pub node: usize,
    pub lat: f64,
    pub lon: f64,
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Vec<T> {
    csv::Reader::from_path(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

/// Pipeline config for a synthetic corpus generated into `out`, with a box
/// wide enough for every zone.
pub fn planted_config(work: &Path, sc: &SynthConfig, out: &Path) -> PipelineConfig {
    let synth = work.join("synth.toml");
    fs::write(&synth, sc.to_toml()).unwrap();
    PipelineConfig {
        inputs: vec![out.join(pipeline::SYNTH_EVENTS)],
        bbox: [-89.0, -179.0, 89.0, 179.0],
        synth: Some(synth),
        out: out.to_path_buf(),
        ..PipelineConfig::default()
    }
}

pub fn synth_then_all(cfg: &PipelineConfig) -> mobgraph::Result<()> {
    pipeline::run(Stage::Synth, cfg)?;
    pipeline::run(Stage::All, cfg)
}

pub fn truth(sc: &SynthConfig) -> GroundTruth {
    generate(sc).unwrap().1
}

/// Users whose home node lies in their true zone, and the number of users.
pub fn home_recovery(out: &Path, truth: &GroundTruth) -> (usize, usize) {
    let rows: Vec<HomeNodeRow> = read_rows(&out.join(pipeline::HOME_NODES));
    let assigned: BTreeMap<&str, GeoPoint> = rows
        .iter()
        .map(|r| (r.user_id.as_str(), GeoPoint::new(r.lat, r.lon).unwrap()))
        .collect();
    let hits = truth
        .home_zone
        .iter()
        .filter(|(u, &z)| assigned.get(u.as_str()).is_some_and(|p| truth.zone_of(p) == z))
        .count();
    (hits, truth.home_zone.len())
}

/// NMI between detected node communities and the planted community of each
/// node's zone.
pub fn community_nmi(out: &Path, truth: &GroundTruth) -> f64 {
    let rows: Vec<NodeTableRow> = read_rows(&out.join(pipeline::NODE_TABLE));
    let detected: Vec<usize> = rows.iter().map(|r| r.community).collect();
    let planted: Vec<usize> = rows
        .iter()
        .map(|r| truth.zone_community[truth.zone_of(&GeoPoint::new(r.lat, r.lon).unwrap())])
        .collect();
    normalized_mutual_information(&detected, &planted).unwrap()
}

/// The analyzed graph and its partition, read back from the artifacts.
pub fn graph_and_partition(out: &Path) -> (MobilityGraph, Vec<usize>) {
    let nodes: Vec<NodeTableRow> = read_rows(&out.join(pipeline::NODE_TABLE));
    let edges: Vec<EdgeRow> = read_rows(&out.join(pipeline::EDGES));
    let e: Vec<(usize, usize, u64)> = edges.iter().map(|r| (r.src, r.dst, r.weight)).collect();
    let g = MobilityGraph::from_edges(nodes.len(), &e).unwrap();
    (g, nodes.iter().map(|r| r.community).collect())
}

pub fn recomputed_modularity(out: &Path) -> f64 {
    let (g, p) = graph_and_partition(out);
    modularity(&g, &p).unwrap()
}

/// File name to contents for every regular file in `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut m = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p: PathBuf = entry.unwrap().path();
        if p.is_file() {
            m.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    m
}
