mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mobgraph::pipeline::{self, Stage};
use mobgraph::synth::SynthConfig;

fn mobgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobgraph")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small synthetic corpus and a config file that points at it.
fn setup(dir: &Path, sc: &SynthConfig) -> String {
    let cfg = common::planted_config(dir, sc, &dir.join("out"));
    let text = format!(
        "inputs = [{:?}]\nbbox = [-89.0, -179.0, 89.0, 179.0]\nsynth = {:?}\nmc_count = 40\n",
        cfg.inputs[0], cfg.synth.as_ref().unwrap()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn synth_then_all_produces_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &SynthConfig::two_blocks(30, 1));
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&mobgraph(&["synth", "--config", &cfg, "--out", out_s])), 0);
    let o = mobgraph(&["all", "--config", &cfg, "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join(pipeline::REPORT_TXT)).unwrap();
    assert!(report.contains("weak components"));
    assert!(report.contains("top 5 central nodes"));
}

#[test]
fn all_equals_the_stages_run_one_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &SynthConfig::two_blocks(30, 2));
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&mobgraph(&["synth", "--config", &cfg, "--out", out_s])), 0);
    assert_eq!(code(&mobgraph(&["all", "--config", &cfg, "--out", out_s])), 0);
    let chained = common::snapshot(&out);
    for stage in ["ingest", "homes", "select", "graph", "analyze", "report"] {
        let o = mobgraph(&[stage, "--config", &cfg, "--out", out_s]);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
    assert_eq!(common::snapshot(&out), chained);
}

#[test]
fn graph_without_homes_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &SynthConfig::two_blocks(10, 3));
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&mobgraph(&["synth", "--config", &cfg, "--out", out_s])), 0);
    assert_eq!(code(&mobgraph(&["ingest", "--config", &cfg, "--out", out_s])), 0);
    let o = mobgraph(&["graph", "--config", &cfg, "--out", out_s]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`graph`"), "{}", stderr(&o));
    assert_eq!(code(&mobgraph(&["report", "--out", out_s])), 2);
}

#[test]
fn stages_refuse_foreign_or_modified_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &SynthConfig::two_blocks(10, 4));
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&mobgraph(&["synth", "--config", &cfg, "--out", out_s])), 0);
    assert_eq!(code(&mobgraph(&["ingest", "--config", &cfg, "--out", out_s])), 0);
    let o = mobgraph(&["homes", "--config", &cfg, "--out", out_s, "--mc-seed", "99"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("config"), "{}", stderr(&o));

    let events = out.join(pipeline::EVENTS);
    let mut bytes = fs::read(&events).unwrap();
    bytes.extend_from_slice(b"\n");
    fs::write(&events, bytes).unwrap();
    let o = mobgraph(&["homes", "--config", &cfg, "--out", out_s]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("modified"), "{}", stderr(&o));
}

#[test]
fn config_violations_exit_1_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    for (args, field) in [
        (vec!["ingest", "--percentile", "0"], "percentile"),
        (vec!["ingest", "--vi-sample-frac", "2"], "vi-sample-frac"),
        (vec!["ingest", "--bbox", "1,2,3"], "bbox"),
        (vec!["ingest", "--utc-offset", "+25:00"], "utc-offset"),
        (vec!["ingest", "--cost-mode", "inverse"], "cost-mode"),
        (vec!["ingest", "--input", "/nonexistent/events.ndjson"], "inputs"),
        (vec!["ingest"], "inputs"),
        (vec!["synth"], "synth"),
    ] {
        let mut a = args.clone();
        a.extend(["--out", out_s]);
        let o = mobgraph(&a);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(code(&mobgraph(&["frobnicate"])), 1);
    assert_eq!(code(&mobgraph(&["--help"])), 0);
}

#[test]
fn no_events_in_the_box_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &SynthConfig::two_blocks(10, 5));
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&mobgraph(&["synth", "--config", &cfg, "--out", out_s])), 0);
    let o = mobgraph(&["all", "--config", &cfg, "--out", out_s, "--bbox", "0,0,1,1"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn empty_graph_report_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    // one zone, no noise: a single node and no edges to keep
    let sc = SynthConfig {
        zones: vec![[32.6, -117.0]],
        users_per_zone: 5,
        commute: vec![vec![1.0]],
        night_events: 5,
        day_events: 5,
        sigma: 0.0,
        ..SynthConfig::two_blocks(1, 6)
    };
    let cfg = common::planted_config(dir.path(), &sc, &dir.path().join("out"));
    common::synth_then_all(&cfg).unwrap();
    let report = fs::read_to_string(cfg.out.join(pipeline::REPORT_TXT)).unwrap();
    assert!(report.contains("vertices                 0"));
    assert!(report.contains("zero nodes"));
    let geo: serde_json::Value = serde_json::from_slice(&fs::read(cfg.out.join(pipeline::GEOJSON)).unwrap()).unwrap();
    assert_eq!(geo["features"].as_array().unwrap().len(), 0);
    pipeline::run(Stage::Report, &cfg).unwrap();
}

#[test]
fn csv_input_matches_ndjson_input() {
    let dir = tempfile::tempdir().unwrap();
    let sc = SynthConfig::two_blocks(10, 7);
    let (events, _) = mobgraph::synth::generate(&sc).unwrap();
    let nd = dir.path().join("events.ndjson");
    let cs = dir.path().join("events.csv");
    let mut buf = Vec::new();
    mobgraph::ingest::write_ndjson(&mut buf, &events).unwrap();
    fs::write(&nd, buf).unwrap();
    let mut buf = Vec::new();
    mobgraph::ingest::write_csv(&mut buf, &events).unwrap();
    fs::write(&cs, buf).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let wide = "-89,-179,89,179";
    for (input, fmt, out) in [(&nd, "ndjson", &a), (&cs, "csv", &b)] {
        let o = mobgraph(&[
            "ingest", "--input", input.to_str().unwrap(), "--format", fmt, "--bbox", wide, "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(fs::read(a.join(pipeline::EVENTS)).unwrap(), fs::read(b.join(pipeline::EVENTS)).unwrap());
}
