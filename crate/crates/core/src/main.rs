use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mobgraph::pipeline::{run, PipelineConfig, Stage};
use mobgraph::{par, Error, Result};

/// Mobility graphs from geo-tagged event streams.
#[derive(Parser)]
#[command(name = "mobgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config; flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(flatten)]
    flags: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Parse, de-duplicate and bbox-filter the input events.
    Ingest,
    /// Sample-scale home and neighborhood runs for every radius pair.
    Homes,
    /// VI selection and node set assembly.
    Select,
    /// Build and prune the mobility graph.
    Graph,
    /// Degrees, KS, communities and betweenness.
    Analyze,
    /// Generate a synthetic corpus with planted truth.
    Synth,
    /// Text and CSV summary of the analysis.
    Report,
    /// ingest, homes, select, graph, analyze and report in order.
    All,
}

#[derive(Args)]
struct Overrides {
    /// Input event file; repeat for several.
    #[arg(long = "input", global = true, value_name = "PATH")]
    inputs: Vec<PathBuf>,
    /// ndjson or csv.
    #[arg(long, global = true)]
    format: Option<String>,
    /// "swlat,swlon,nelat,nelon"
    #[arg(long, global = true, allow_hyphen_values = true)]
    bbox: Option<String>,
    /// Local night window, "22:00-04:00".
    #[arg(long, global = true)]
    night: Option<String>,
    /// "-08:00"
    #[arg(long, global = true, allow_hyphen_values = true)]
    utc_offset: Option<String>,
    #[arg(long, global = true)]
    min_pts: Option<usize>,
    #[arg(long, global = true)]
    mc_count: Option<usize>,
    #[arg(long, global = true)]
    mc_seed: Option<u64>,
    #[arg(long, global = true)]
    vi_sample_frac: Option<f64>,
    #[arg(long, global = true)]
    percentile: Option<f64>,
    /// Degrees.
    #[arg(long, global = true)]
    merge_radius: Option<f64>,
    /// desc or asc.
    #[arg(long, global = true)]
    select_order: Option<String>,
    /// reciprocal or uniform.
    #[arg(long, global = true)]
    cost_mode: Option<String>,
    #[arg(long, global = true)]
    louvain_seed: Option<u64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Generator config for `synth`.
    #[arg(long, global = true, value_name = "PATH")]
    synth_config: Option<PathBuf>,
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

fn parse_bbox(s: &str) -> Result<[f64; 4]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| config_error("bbox", e.to_string()))?;
    v.try_into()
        .map_err(|_| config_error("bbox", "expected swlat,swlon,nelat,nelon"))
}

fn apply(cfg: &mut PipelineConfig, f: Overrides) -> Result<()> {
    if !f.inputs.is_empty() {
        cfg.inputs = f.inputs;
    }
    if let Some(s) = f.format {
        cfg.format = s.parse()?;
    }
    if let Some(s) = f.bbox {
        cfg.bbox = parse_bbox(&s)?;
    }
    if let Some(s) = f.night {
        cfg.night = s;
    }
    if let Some(s) = f.utc_offset {
        cfg.utc_offset = s;
    }
    if let Some(s) = f.select_order {
        cfg.select_order = s.parse()?;
    }
    if let Some(s) = f.cost_mode {
        cfg.cost_mode = s.parse()?;
    }
    cfg.min_pts = f.min_pts.unwrap_or(cfg.min_pts);
    cfg.mc_count = f.mc_count.unwrap_or(cfg.mc_count);
    cfg.mc_seed = f.mc_seed.unwrap_or(cfg.mc_seed);
    cfg.vi_sample_frac = f.vi_sample_frac.unwrap_or(cfg.vi_sample_frac);
    cfg.percentile = f.percentile.unwrap_or(cfg.percentile);
    cfg.merge_radius = f.merge_radius.unwrap_or(cfg.merge_radius);
    cfg.louvain_seed = f.louvain_seed.unwrap_or(cfg.louvain_seed);
    cfg.top_k = f.top_k.unwrap_or(cfg.top_k);
    if f.synth_config.is_some() {
        cfg.synth = f.synth_config;
    }
    Ok(())
}

fn stage(c: Command) -> Stage {
    match c {
        Command::Ingest => Stage::Ingest,
        Command::Homes => Stage::Homes,
        Command::Select => Stage::Select,
        Command::Graph => Stage::Graph,
        Command::Analyze => Stage::Analyze,
        Command::Synth => Stage::Synth,
        Command::Report => Stage::Report,
        Command::All => Stage::All,
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    apply(&mut cfg, cli.flags)?;
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if cli.threads == Some(0) {
        return Err(config_error("threads", "must be at least 1"));
    }
    par::init_threads(cli.threads);
    run(stage(cli.command), &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mobgraph: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
