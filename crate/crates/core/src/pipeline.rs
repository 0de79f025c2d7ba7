//! Stage runner for the command-line tool.
//!
//! Each stage reads its predecessors' artifacts from the output directory
//! and writes its own, followed by `<stage>.manifest.json` holding the
//! schema version, the config hash and a SHA-256 digest of every file the
//! stage read or wrote. A stage refuses an artifact whose manifest is
//! missing, was written under a different config, or whose file no longer
//! matches its digest.
//!
//! | stage   | reads                               | writes |
//! |---------|-------------------------------------|--------|
//! | ingest  | input files                         | `events.ndjson`, `ingest_errors.csv`, `ingest_summary.json` |
//! | homes   | events                              | `pairs.csv`, `sample_runs.csv` |
//! | select  | pairs, sample runs, events          | `selection.csv`, `nodes.csv`, `homes.csv`, `select_summary.json` |
//! | graph   | homes, nodes, events                | `edges.csv`, `graph_nodes.csv`, `home_nodes.csv`, `graph_summary.json` |
//! | analyze | graph                               | `node_table.csv`, `nodes.geojson`, `analysis.json` |
//! | report  | analysis                            | `report.txt`, `report.csv` |
//! | synth   | synth config                        | `synth_events.ndjson`, `truth_users.csv`, `truth_zones.csv` |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::centrality::{betweenness_with, rank_nodes, CostMode};
use crate::cluster::{Clustering, HomeLocation, UserPoints};
use crate::community::louvain;
use crate::error::{Error, Result};
use crate::geo::{BoundingBox, GeoPoint};
use crate::graph::{
    assign_homes, build_graph, degree_stats, prune_isolated, weak_components, Edge, MobilityGraph, Node,
    Summary,
};
use crate::ingest::{
    dedup_by_id, filter_bbox, filter_night, group_by_user, parse_events, write_ndjson, Format, GeoEvent,
    NightWindow,
};
use crate::par::Exec;
use crate::select::{
    assemble_nodes, run_pairs, run_vi_matrix, sample_fraction, sample_pairs, select_top, selection_rows,
    write_selection_csv, EpsilonPair, NodeCenter, NodeSet, SelectOrder, TwoStage,
};
use crate::stats::{ks_two_sample, KsResult};
use crate::synth::{generate, SynthConfig};

pub const SCHEMA_VERSION: u32 = 1;

pub const EVENTS: &str = "events.ndjson";
pub const INGEST_ERRORS: &str = "ingest_errors.csv";
pub const INGEST_SUMMARY: &str = "ingest_summary.json";
pub const PAIRS: &str = "pairs.csv";
pub const SAMPLE_RUNS: &str = "sample_runs.csv";
pub const SELECTION: &str = "selection.csv";
pub const NODES: &str = "nodes.csv";
pub const HOMES: &str = "homes.csv";
pub const SELECT_SUMMARY: &str = "select_summary.json";
pub const EDGES: &str = "edges.csv";
pub const GRAPH_NODES: &str = "graph_nodes.csv";
pub const HOME_NODES: &str = "home_nodes.csv";
pub const GRAPH_SUMMARY: &str = "graph_summary.json";
pub const NODE_TABLE: &str = "node_table.csv";
pub const GEOJSON: &str = "nodes.geojson";
pub const ANALYSIS: &str = "analysis.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const SYNTH_EVENTS: &str = "synth_events.ndjson";
pub const TRUTH_USERS: &str = "truth_users.csv";
pub const TRUTH_ZONES: &str = "truth_zones.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Homes,
    Select,
    Graph,
    Analyze,
    Report,
    Synth,
    All,
}

impl Stage {
    /// What `All` runs, in order.
    pub const CHAIN: [Stage; 6] = [
        Stage::Ingest,
        Stage::Homes,
        Stage::Select,
        Stage::Graph,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Homes => "homes",
            Stage::Select => "select",
            Stage::Graph => "graph",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
            Stage::Synth => "synth",
            Stage::All => "all",
        }
    }

    pub fn manifest_name(self) -> String {
        format!("{}.manifest.json", self.name())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::Synth, Stage::All]
            .into_iter()
            .chain(Stage::CHAIN)
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("stage", format!("unknown stage {s:?}")))
    }
}

/// Every tunable of a run. Loaded from TOML; unset keys take the defaults
/// below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub format: Format,
    /// `[sw_lat, sw_lon, ne_lat, ne_lon]`.
    pub bbox: [f64; 4],
    /// Local night window, `HH:MM-HH:MM`.
    pub night: String,
    pub utc_offset: String,
    pub min_pts: usize,
    pub mc_count: usize,
    pub mc_seed: u64,
    pub vi_sample_frac: f64,
    pub percentile: f64,
    /// Degrees.
    pub merge_radius: f64,
    pub select_order: SelectOrder,
    pub cost_mode: CostMode,
    pub louvain_seed: u64,
    pub top_k: usize,
    /// Generator settings for the `synth` stage.
    pub synth: Option<PathBuf>,
    /// Output directory. Not part of the config hash.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let bb = BoundingBox::san_diego_tijuana();
        let (sw, ne) = (bb.south_west(), bb.north_east());
        PipelineConfig {
            inputs: Vec::new(),
            format: Format::Ndjson,
            bbox: [sw.lat(), sw.lon(), ne.lat(), ne.lon()],
            night: "22:00-04:00".into(),
            utc_offset: "-08:00".into(),
            min_pts: 3,
            mc_count: 500,
            mc_seed: 1,
            vi_sample_frac: 0.01,
            percentile: 5.0,
            merge_radius: 0.001,
            select_order: SelectOrder::Desc,
            cost_mode: CostMode::Reciprocal,
            louvain_seed: 1,
            top_k: 5,
            synth: None,
            out: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        PipelineConfig::from_toml(&text)
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn bounding_box(&self) -> Result<BoundingBox> {
        let [a, b, c, d] = self.bbox;
        let corners = GeoPoint::new(a, b).and_then(|sw| Ok((sw, GeoPoint::new(c, d)?)));
        corners
            .and_then(|(sw, ne)| BoundingBox::new(sw, ne))
            .map_err(|e| Error::config("bbox", e.to_string()))
    }

    pub fn night_window(&self) -> Result<NightWindow> {
        NightWindow::parse(&self.night, &self.utc_offset)
    }

    pub fn validate(&self) -> Result<()> {
        self.bounding_box()?;
        self.night_window()?;
        if self.min_pts == 0 {
            return Err(Error::config("min-pts", "must be at least 1"));
        }
        if self.mc_count < 2 {
            return Err(Error::config("mc-count", "at least 2 pairs are needed for a comparison"));
        }
        if !(self.vi_sample_frac > 0.0 && self.vi_sample_frac <= 1.0) {
            return Err(Error::config("vi-sample-frac", format!("{} not in (0, 1]", self.vi_sample_frac)));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::config("percentile", format!("{} not in (0, 100]", self.percentile)));
        }
        if !(self.merge_radius.is_finite() && self.merge_radius >= 0.0) {
            return Err(Error::config("merge-radius", "must be a non-negative number of degrees"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top-k", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Artifact bookkeeping for one stage.
struct StageIo<'a> {
    stage: Stage,
    dir: &'a Path,
    hash: &'a str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> StageIo<'a> {
    fn missing(&self, path: &Path, reason: String) -> Error {
        Error::MissingArtifact {
            stage: self.stage.name(),
            path: path.to_path_buf(),
            reason,
        }
    }

    /// Read `name` as written by stage `from`.
    fn read(&mut self, from: Stage, name: &str) -> Result<Vec<u8>> {
        let mpath = self.dir.join(from.manifest_name());
        let raw = fs::read(&mpath).map_err(|_| self.missing(&mpath, format!("run `{from}` first")))?;
        let m: Manifest = serde_json::from_slice(&raw)
            .map_err(|e| self.missing(&mpath, format!("unreadable manifest: {e}")))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(self.missing(&mpath, format!("schema version {} (expected {SCHEMA_VERSION})", m.schema_version)));
        }
        if m.config_hash != self.hash {
            return Err(self.missing(
                &mpath,
                format!("written under config {}, current config is {}; rerun `{from}`", &m.config_hash[..12.min(m.config_hash.len())], &self.hash[..12]),
            ));
        }
        let path = self.dir.join(name);
        let want = m
            .outputs
            .get(name)
            .ok_or_else(|| self.missing(&path, format!("not listed by `{from}`")))?
            .clone();
        let bytes = fs::read(&path).map_err(|e| self.missing(&path, e.to_string()))?;
        let got = digest(&bytes);
        if got != want {
            return Err(self.missing(&path, format!("modified since `{from}` wrote it")));
        }
        self.inputs.insert(name.to_string(), got);
        Ok(bytes)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(name.to_string(), digest(bytes));
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let m = Manifest {
            schema_version: SCHEMA_VERSION,
            stage: self.stage.name().to_string(),
            config_hash: self.hash.to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.dir.join(self.stage.manifest_name());
        fs::write(&path, json_bytes(&m)).map_err(|e| Error::io(&path, e))
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("artifact serializes");
    b.push(b'\n');
    b
}

fn read_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    Ok(serde_json::from_slice(bytes)?)
}

fn csv_bytes<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

fn read_csv<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn load_events(bytes: &[u8]) -> Result<Vec<GeoEvent>> {
    let parsed = parse_events(bytes, Format::Ndjson)?;
    if let Some(e) = parsed.errors.first() {
        return Err(Error::Data(format!("{EVENTS} line {}: {}", e.line, e.message)));
    }
    Ok(parsed.events)
}

/// Night events grouped per user, users in id order.
fn night_users(events: Vec<GeoEvent>, night: &NightWindow) -> Vec<UserPoints> {
    group_by_user(filter_night(events, night))
        .into_iter()
        .map(|(user_id, evs)| UserPoints {
            user_id,
            points: evs.iter().map(|e| e.location).collect(),
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RejectRow {
    file: String,
    line: u64,
    message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: usize,
    pub rejected: usize,
    pub duplicates: usize,
    pub outside_bbox: usize,
    pub events: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    pair_id: usize,
    eps1: f64,
    eps2: f64,
    sample_users: usize,
    homes: usize,
    neighborhoods: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRunRow {
    pair_id: usize,
    user_id: String,
    lat: f64,
    lon: f64,
    support: usize,
    /// -1 for noise.
    label: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HomeRow {
    user_id: String,
    lat: f64,
    lon: f64,
    support: usize,
    pair_id: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    id: usize,
    lat: f64,
    lon: f64,
    pair_id: usize,
    cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectSummary {
    pub order: SelectOrder,
    pub percentile: f64,
    /// Pair ids of the selected clusterings.
    pub selected: Vec<usize>,
    /// Pair whose full-scale homes feed the graph.
    pub home_pair: usize,
    pub candidates: usize,
    pub nodes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphNodeRow {
    id: usize,
    /// Row in `nodes.csv`.
    source: usize,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    src: usize,
    dst: usize,
    weight: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HomeNodeRow {
    user_id: String,
    /// Row in `nodes.csv`.
    node: usize,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub candidate_nodes: usize,
    pub candidate_edges: usize,
    pub candidate_components: usize,
    pub isolated_removed: usize,
    pub nodes: usize,
    pub edges: usize,
    pub components: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeTableRow {
    id: usize,
    lat: f64,
    lon: f64,
    component: usize,
    community: usize,
    in_degree: u64,
    out_degree: u64,
    betweenness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Central {
    pub rank: usize,
    pub node: usize,
    pub lat: f64,
    pub lon: f64,
    pub betweenness: f64,
}

/// Everything the report prints. Degree, KS, community and centrality
/// fields are absent for an empty graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub candidate_nodes: usize,
    pub isolated_removed: usize,
    pub nodes: usize,
    pub edges: usize,
    pub components: usize,
    pub in_degree: Option<Summary>,
    pub out_degree: Option<Summary>,
    /// In-degree against out-degree distribution.
    pub ks: Option<KsResult>,
    pub louvain_seed: u64,
    pub communities: usize,
    pub modularity: Option<f64>,
    pub cost_mode: CostMode,
    pub betweenness: Option<ScoreSummary>,
    pub top_central: Vec<Central>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    hash: String,
    exec: Exec,
}

/// Validate `cfg` and run `stage` with the default execution strategy.
pub fn run(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    Pipeline::new(cfg.clone())?.run(stage)
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        Ok(Pipeline {
            cfg,
            hash,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        fs::create_dir_all(&self.cfg.out).map_err(|e| Error::io(&self.cfg.out, e))?;
        match stage {
            Stage::All => Stage::CHAIN.iter().try_for_each(|&s| self.run(s)),
            s => {
                info!("stage {s}: start");
                let manifest = self.cfg.out.join(s.manifest_name());
                if manifest.exists() {
                    fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
                }
                let mut io = StageIo {
                    stage: s,
                    dir: &self.cfg.out,
                    hash: &self.hash,
                    inputs: BTreeMap::new(),
                    outputs: BTreeMap::new(),
                };
                match s {
                    Stage::Ingest => self.ingest(&mut io)?,
                    Stage::Homes => self.homes(&mut io)?,
                    Stage::Select => self.select(&mut io)?,
                    Stage::Graph => self.graph(&mut io)?,
                    Stage::Analyze => self.analyze(&mut io)?,
                    Stage::Report => self.report(&mut io)?,
                    Stage::Synth => self.synth(&mut io)?,
                    Stage::All => unreachable!(),
                }
                io.finish()?;
                info!("stage {s}: done");
                Ok(())
            }
        }
    }

    fn ingest(&self, io: &mut StageIo) -> Result<()> {
        if self.cfg.inputs.is_empty() {
            return Err(Error::config("inputs", "no input files given"));
        }
        if let Some(p) = self.cfg.inputs.iter().find(|p| !p.is_file()) {
            return Err(Error::config("inputs", format!("{} does not exist", p.display())));
        }
        let bb = self.cfg.bounding_box()?;
        let mut events = Vec::new();
        let mut rejects = Vec::new();
        for path in &self.cfg.inputs {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            io.inputs.insert(format!("input:{}", path.display()), digest(&bytes));
            let parsed = parse_events(&bytes[..], self.cfg.format)?;
            for e in parsed.errors {
                rejects.push(RejectRow {
                    file: path.display().to_string(),
                    line: e.line,
                    message: e.message,
                });
            }
            events.extend(parsed.events);
        }
        let records = events.len() + rejects.len();
        let duplicates = dedup_by_id(&mut events);
        let unique = events.len();
        let events = filter_bbox(events, &bb);
        let summary = IngestSummary {
            records,
            rejected: rejects.len(),
            duplicates,
            outside_bbox: unique - events.len(),
            events: events.len(),
        };
        if !rejects.is_empty() {
            warn!("{} malformed records skipped, see {INGEST_ERRORS}", rejects.len());
        }
        info!("{} events kept of {} records", summary.events, summary.records);

        let mut buf = Vec::new();
        write_ndjson(&mut buf, &events)?;
        io.write(EVENTS, &buf)?;
        io.write(INGEST_ERRORS, &csv_bytes(&["file", "line", "message"], &rejects)?)?;
        io.write(INGEST_SUMMARY, &json_bytes(&summary))
    }

    fn homes(&self, io: &mut StageIo) -> Result<()> {
        let events = load_events(&io.read(Stage::Ingest, EVENTS)?)?;
        let night = self.cfg.night_window()?;
        let sample = sample_fraction(&events, self.cfg.vi_sample_frac, self.cfg.mc_seed.wrapping_add(1))?;
        let users = night_users(sample, &night);
        let pairs = sample_pairs(self.cfg.mc_count, self.cfg.mc_seed)?;
        info!("{} pairs on a sample of {} night users", pairs.len(), users.len());
        let runs = run_pairs(&users, &pairs, self.cfg.min_pts, self.exec)?;

        let pair_rows: Vec<PairRow> = runs
            .iter()
            .map(|r| PairRow {
                pair_id: r.pair.pair_id,
                eps1: r.pair.eps1,
                eps2: r.pair.eps2,
                sample_users: users.len(),
                homes: r.homes.len(),
                neighborhoods: r.neighborhoods.num_clusters(),
            })
            .collect();
        let run_rows: Vec<SampleRunRow> = runs
            .iter()
            .flat_map(|r| {
                r.homes.iter().zip(&r.neighborhoods.labels).map(|(h, l)| SampleRunRow {
                    pair_id: r.pair.pair_id,
                    user_id: h.user_id.clone(),
                    lat: h.center.lat(),
                    lon: h.center.lon(),
                    support: h.support,
                    label: l.map_or(-1, |k| k as i64),
                })
            })
            .collect();
        io.write(
            PAIRS,
            &csv_bytes(&["pair_id", "eps1", "eps2", "sample_users", "homes", "neighborhoods"], &pair_rows)?,
        )?;
        io.write(
            SAMPLE_RUNS,
            &csv_bytes(&["pair_id", "user_id", "lat", "lon", "support", "label"], &run_rows)?,
        )
    }

    fn select(&self, io: &mut StageIo) -> Result<()> {
        let pairs: Vec<PairRow> = read_csv(&io.read(Stage::Homes, PAIRS)?)?;
        let rows: Vec<SampleRunRow> = read_csv(&io.read(Stage::Homes, SAMPLE_RUNS)?)?;
        let runs = rebuild_runs(&pairs, &rows)?;
        let vi = run_vi_matrix(&runs, self.exec);
        let selected = select_top(&vi, self.cfg.percentile, self.cfg.select_order)?;
        info!(
            "{} of {} clusterings selected ({:?} order, top {}%)",
            selected.len(),
            runs.len(),
            self.cfg.select_order,
            self.cfg.percentile
        );

        let events = load_events(&io.read(Stage::Ingest, EVENTS)?)?;
        let users = night_users(events, &self.cfg.night_window()?);
        let chosen: Vec<EpsilonPair> = selected.iter().map(|&i| runs[i].pair).collect();
        let full = run_pairs(&users, &chosen, self.cfg.min_pts, self.exec)?;
        let candidates: Vec<NodeCenter> = full.iter().flat_map(TwoStage::centers).collect();
        if candidates.is_empty() {
            return Err(Error::Data("no selected clustering produced a neighborhood".into()));
        }
        let node_set = assemble_nodes(&candidates, self.cfg.merge_radius)?;

        let mut by_eps1: Vec<&TwoStage> = full.iter().collect();
        by_eps1.sort_by(|a, b| a.pair.eps1.total_cmp(&b.pair.eps1).then(a.pair.pair_id.cmp(&b.pair.pair_id)));
        let home_run = by_eps1[(by_eps1.len() - 1) / 2];
        info!(
            "{} nodes from {} candidate centers; homes from pair {}",
            node_set.len(),
            candidates.len(),
            home_run.pair.pair_id
        );

        let mut buf = Vec::new();
        write_selection_csv(&mut buf, &selection_rows(&runs, &vi, &selected))?;
        io.write(SELECTION, &buf)?;
        let node_rows: Vec<NodeRow> = node_set
            .centers
            .iter()
            .enumerate()
            .map(|(id, c)| NodeRow {
                id,
                lat: c.point.lat(),
                lon: c.point.lon(),
                pair_id: c.pair_id,
                cluster: c.cluster,
            })
            .collect();
        io.write(NODES, &csv_bytes(&["id", "lat", "lon", "pair_id", "cluster"], &node_rows)?)?;
        let home_rows: Vec<HomeRow> = home_run
            .homes
            .iter()
            .map(|h| HomeRow {
                user_id: h.user_id.clone(),
                lat: h.center.lat(),
                lon: h.center.lon(),
                support: h.support,
                pair_id: home_run.pair.pair_id,
            })
            .collect();
        io.write(HOMES, &csv_bytes(&["user_id", "lat", "lon", "support", "pair_id"], &home_rows)?)?;
        let summary = SelectSummary {
            order: self.cfg.select_order,
            percentile: self.cfg.percentile,
            selected: chosen.iter().map(|p| p.pair_id).collect(),
            home_pair: home_run.pair.pair_id,
            candidates: candidates.len(),
            nodes: node_set.len(),
        };
        io.write(SELECT_SUMMARY, &json_bytes(&summary))
    }

    fn graph(&self, io: &mut StageIo) -> Result<()> {
        let home_rows: Vec<HomeRow> = read_csv(&io.read(Stage::Select, HOMES)?)?;
        let node_rows: Vec<NodeRow> = read_csv(&io.read(Stage::Select, NODES)?)?;
        let events = load_events(&io.read(Stage::Ingest, EVENTS)?)?;
        let homes = home_rows
            .into_iter()
            .map(|r| {
                Ok(HomeLocation {
                    user_id: r.user_id,
                    center: GeoPoint::new(r.lat, r.lon)?,
                    support: r.support,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let centers = node_rows
            .iter()
            .map(|r| {
                Ok(NodeCenter {
                    point: GeoPoint::new(r.lat, r.lon)?,
                    pair_id: r.pair_id,
                    cluster: r.cluster,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let node_set = NodeSet {
            centers,
            merge_radius: self.cfg.merge_radius,
        };

        let full = build_graph(&homes, &node_set, &events, self.exec)?;
        let (g, removed) = prune_isolated(&full);
        let comps = weak_components(&g);
        let summary = GraphSummary {
            candidate_nodes: full.node_count(),
            candidate_edges: full.edge_count(),
            candidate_components: weak_components(&full).count,
            isolated_removed: removed,
            nodes: g.node_count(),
            edges: g.edge_count(),
            components: comps.count,
        };
        info!(
            "graph: {} nodes ({} isolated removed), {} edges, {} components",
            summary.nodes, removed, summary.edges, summary.components
        );

        let assignment = assign_homes(&homes, &node_set, self.exec)?;
        let home_nodes: Vec<HomeNodeRow> = assignment
            .home_node
            .into_iter()
            .map(|(user_id, node)| HomeNodeRow {
                user_id,
                node,
                lat: node_set.centers[node].point.lat(),
                lon: node_set.centers[node].point.lon(),
            })
            .collect();
        let node_out: Vec<GraphNodeRow> = g
            .nodes()
            .iter()
            .enumerate()
            .map(|(id, n)| GraphNodeRow {
                id,
                source: n.source,
                lat: n.point.lat(),
                lon: n.point.lon(),
            })
            .collect();
        let edge_out: Vec<EdgeRow> = g
            .edges()
            .iter()
            .map(|e| EdgeRow {
                src: e.src,
                dst: e.dst,
                weight: e.weight,
            })
            .collect();
        io.write(EDGES, &csv_bytes(&["src", "dst", "weight"], &edge_out)?)?;
        io.write(GRAPH_NODES, &csv_bytes(&["id", "source", "lat", "lon"], &node_out)?)?;
        io.write(HOME_NODES, &csv_bytes(&["user_id", "node", "lat", "lon"], &home_nodes)?)?;
        io.write(GRAPH_SUMMARY, &json_bytes(&summary))
    }

    fn analyze(&self, io: &mut StageIo) -> Result<()> {
        let node_rows: Vec<GraphNodeRow> = read_csv(&io.read(Stage::Graph, GRAPH_NODES)?)?;
        let edge_rows: Vec<EdgeRow> = read_csv(&io.read(Stage::Graph, EDGES)?)?;
        let gs: GraphSummary = read_json(&io.read(Stage::Graph, GRAPH_SUMMARY)?)?;
        let nodes = node_rows
            .iter()
            .map(|r| {
                Ok(Node {
                    point: GeoPoint::new(r.lat, r.lon)?,
                    source: r.source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let edges = edge_rows
            .iter()
            .map(|r| Edge {
                src: r.src,
                dst: r.dst,
                weight: r.weight,
            })
            .collect();
        let g = MobilityGraph::new(nodes, edges)?;
        let comps = weak_components(&g);

        let mut analysis = Analysis {
            candidate_nodes: gs.candidate_nodes,
            isolated_removed: gs.isolated_removed,
            nodes: g.node_count(),
            edges: g.edge_count(),
            components: comps.count,
            in_degree: None,
            out_degree: None,
            ks: None,
            louvain_seed: self.cfg.louvain_seed,
            communities: 0,
            modularity: None,
            cost_mode: self.cfg.cost_mode,
            betweenness: None,
            top_central: Vec::new(),
        };
        let mut table = Vec::new();
        if g.node_count() > 0 {
            let deg = degree_stats(&g)?;
            let as_f64 = |v: &[u64]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
            let ks = ks_two_sample(&as_f64(&deg.in_degree), &as_f64(&deg.out_degree))?;
            let part = louvain(&g, self.cfg.louvain_seed)?;
            let bc = betweenness_with(&g, self.cfg.cost_mode, self.exec);
            let top = rank_nodes(&g, &bc.scores, self.cfg.top_k)?;
            info!("louvain: {} communities, Q = {}", part.count, part.modularity);

            analysis.in_degree = Some(deg.in_summary);
            analysis.out_degree = Some(deg.out_summary);
            analysis.ks = Some(ks);
            analysis.communities = part.count;
            analysis.modularity = Some(part.modularity);
            analysis.betweenness = Some(ScoreSummary {
                min: bc.min,
                max: bc.max,
                median: bc.median,
            });
            analysis.top_central = top
                .iter()
                .enumerate()
                .map(|(i, r)| Central {
                    rank: i + 1,
                    node: r.id,
                    lat: r.point.lat(),
                    lon: r.point.lon(),
                    betweenness: r.score,
                })
                .collect();
            table = g
                .nodes()
                .iter()
                .enumerate()
                .map(|(id, n)| NodeTableRow {
                    id,
                    lat: n.point.lat(),
                    lon: n.point.lon(),
                    component: comps.labels[id],
                    community: part.communities[id],
                    in_degree: deg.in_degree[id],
                    out_degree: deg.out_degree[id],
                    betweenness: bc.scores[id],
                })
                .collect();
        } else {
            warn!("graph has no nodes; skipping degree, community and centrality analysis");
        }

        let header = ["id", "lat", "lon", "component", "community", "in_degree", "out_degree", "betweenness"];
        io.write(NODE_TABLE, &csv_bytes(&header, &table)?)?;
        io.write(GEOJSON, &json_bytes(&geojson(&table)))?;
        io.write(ANALYSIS, &json_bytes(&analysis))
    }

    fn report(&self, io: &mut StageIo) -> Result<()> {
        let a: Analysis = read_json(&io.read(Stage::Analyze, ANALYSIS)?)?;
        io.write(REPORT_TXT, render_report(&a, &self.hash).as_bytes())?;
        let rows: Vec<(String, String)> = report_rows(&a);
        io.write(REPORT_CSV, &csv_bytes(&["statistic", "value"], &rows)?)
    }

    fn synth(&self, io: &mut StageIo) -> Result<()> {
        let path = self
            .cfg
            .synth
            .as_ref()
            .ok_or_else(|| Error::config("synth", "no synth config given"))?;
        let text = fs::read(path).map_err(|e| Error::config("synth", format!("{}: {e}", path.display())))?;
        io.inputs.insert(format!("input:{}", path.display()), digest(&text));
        let sc = SynthConfig::from_toml(&String::from_utf8_lossy(&text))?;
        let (events, truth) = generate(&sc)?;
        info!("synth: {} events for {} users", events.len(), truth.home_zone.len());
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &events)?;
        io.write(SYNTH_EVENTS, &buf)?;
        let mut buf = Vec::new();
        truth.write_users_csv(&mut buf)?;
        io.write(TRUTH_USERS, &buf)?;
        let mut buf = Vec::new();
        truth.write_zones_csv(&mut buf)?;
        io.write(TRUTH_ZONES, &buf)
    }
}

/// Sample-scale runs back from their CSV form. User indices are ranks in
/// user-id order, which is the order the homes stage grouped them in.
fn rebuild_runs(pairs: &[PairRow], rows: &[SampleRunRow]) -> Result<Vec<TwoStage>> {
    let ids: BTreeSet<&str> = rows.iter().map(|r| r.user_id.as_str()).collect();
    let rank: BTreeMap<&str, usize> = ids.into_iter().enumerate().map(|(i, u)| (u, i)).collect();
    let mut by_pair: BTreeMap<usize, Vec<&SampleRunRow>> = BTreeMap::new();
    for r in rows {
        by_pair.entry(r.pair_id).or_default().push(r);
    }
    pairs
        .iter()
        .map(|p| {
            let members = by_pair.remove(&p.pair_id).unwrap_or_default();
            let home_users: Vec<usize> = members.iter().map(|r| rank[r.user_id.as_str()]).collect();
            if home_users.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!("{SAMPLE_RUNS}: pair {} users out of order", p.pair_id)));
            }
            let homes = members
                .iter()
                .map(|r| {
                    Ok(HomeLocation {
                        user_id: r.user_id.clone(),
                        center: GeoPoint::new(r.lat, r.lon)?,
                        support: r.support,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let raw: Vec<Option<usize>> = members
                .iter()
                .map(|r| (r.label >= 0).then_some(r.label as usize))
                .collect();
            let points: Vec<GeoPoint> = homes.iter().map(|h| h.center).collect();
            let neighborhoods = Clustering::from_labels(&points, &raw, vec![false; points.len()]);
            Ok(TwoStage {
                pair: EpsilonPair {
                    pair_id: p.pair_id,
                    eps1: p.eps1,
                    eps2: p.eps2,
                },
                home_users,
                homes,
                neighborhoods,
            })
        })
        .collect()
}

fn geojson(table: &[NodeTableRow]) -> serde_json::Value {
    let features: Vec<serde_json::Value> = table
        .iter()
        .map(|r| {
            serde_json::json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [r.lon, r.lat] },
                "properties": {
                    "id": r.id,
                    "component": r.component,
                    "community": r.community,
                    "in_degree": r.in_degree,
                    "out_degree": r.out_degree,
                    "betweenness": r.betweenness,
                },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}

fn render_report(a: &Analysis, hash: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mobility graph report");
    let _ = writeln!(s, "config {}", &hash[..12]);
    let _ = writeln!(s);
    let _ = writeln!(s, "candidate nodes          {}", a.candidate_nodes);
    let _ = writeln!(s, "isolated nodes removed   {}", a.isolated_removed);
    let _ = writeln!(s, "vertices                 {}", a.nodes);
    let _ = writeln!(s, "edges                    {}", a.edges);
    let _ = writeln!(s, "weak components          {}", a.components);
    if a.nodes == 0 {
        let _ = writeln!(s);
        let _ = writeln!(s, "the graph has zero nodes; degree, community and centrality statistics are undefined");
        return s;
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "weighted degree          min        max     median");
    for (name, d) in [("in", &a.in_degree), ("out", &a.out_degree)] {
        if let Some(d) = d {
            let _ = writeln!(s, "  {name:<22} {:>3} {:>10} {:>10}", d.min, d.max, d.median);
        }
    }
    if let Some(ks) = &a.ks {
        let _ = writeln!(s, "KS in vs out             D = {:.4}, p = {:.4}", ks.statistic, ks.p_value);
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "communities (louvain)    {} (seed {}), Q = {:.4}",
        a.communities,
        a.louvain_seed,
        a.modularity.unwrap_or(0.0)
    );
    if let Some(b) = &a.betweenness {
        let cost = match a.cost_mode {
            CostMode::Reciprocal => "reciprocal",
            CostMode::Uniform => "uniform",
        };
        let _ = writeln!(s, "betweenness ({cost} cost) min {:.1}, max {:.1}, median {:.1}", b.min, b.max, b.median);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "top {} central nodes", a.top_central.len());
    for c in &a.top_central {
        let _ = writeln!(
            s,
            "  {:>2}. node {:<6} ({:.6}, {:.6})  {:.1}",
            c.rank, c.node, c.lat, c.lon, c.betweenness
        );
    }
    s
}

fn report_rows(a: &Analysis) -> Vec<(String, String)> {
    let mut rows: Vec<(String, String)> = vec![
        ("candidate_nodes".into(), a.candidate_nodes.to_string()),
        ("isolated_removed".into(), a.isolated_removed.to_string()),
        ("vertices".into(), a.nodes.to_string()),
        ("edges".into(), a.edges.to_string()),
        ("components".into(), a.components.to_string()),
    ];
    for (name, d) in [("in_degree", &a.in_degree), ("out_degree", &a.out_degree)] {
        if let Some(d) = d {
            rows.push((format!("{name}_min"), d.min.to_string()));
            rows.push((format!("{name}_max"), d.max.to_string()));
            rows.push((format!("{name}_median"), d.median.to_string()));
        }
    }
    if let Some(ks) = &a.ks {
        rows.push(("ks_statistic".into(), ks.statistic.to_string()));
        rows.push(("ks_p_value".into(), ks.p_value.to_string()));
    }
    if let Some(q) = a.modularity {
        rows.push(("communities".into(), a.communities.to_string()));
        rows.push(("modularity".into(), q.to_string()));
    }
    if let Some(b) = &a.betweenness {
        rows.push(("betweenness_min".into(), b.min.to_string()));
        rows.push(("betweenness_max".into(), b.max.to_string()));
        rows.push(("betweenness_median".into(), b.median.to_string()));
    }
    for c in &a.top_central {
        let k = c.rank;
        rows.push((format!("central_{k}_node"), c.node.to_string()));
        rows.push((format!("central_{k}_lat"), c.lat.to_string()));
        rows.push((format!("central_{k}_lon"), c.lon.to_string()));
        rows.push((format!("central_{k}_betweenness"), c.betweenness.to_string()));
    }
    rows
}
