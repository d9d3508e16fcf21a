use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use txdrift::graph::NodeType;
use txdrift::pipeline::{run_all, run_stage, PipelineConfig, Stage};
use txdrift::{Error, Result};

/// Drift analysis of dynamic transaction graphs.
///
/// Settings come from built-in defaults, then `--config`, then `--set`,
/// then the dedicated flags below; later sources win.
#[derive(Debug, Parser)]
#[command(name = "txdrift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic transaction corpus.
    Gen,
    /// Parse and validate transactions.
    Ingest,
    /// Project each window into a weighted pair multiset.
    Project,
    /// Train chained embedding snapshots.
    Train,
    /// Per-node shift series, max-shift months and category mixes.
    Shift,
    /// Top-k neighborhood overlap across snapshots.
    Neighborhoods,
    /// Kalman-smooth embedding trajectories.
    Smooth,
    /// Export velocity vectors of the smoothed trajectories.
    Velocity,
    /// Forecast next-step cosine shift over the sequence/training length grid.
    Forecast,
    /// Summarize every analysis in one markdown report.
    Report,
    /// Run every stage in order, skipping `gen` when an input file is set.
    All,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads; 1 is deterministic, 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Transaction file to analyze instead of the synthetic corpus.
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Which side of the bipartite graph to embed.
    #[arg(long, global = true, value_parser = parse_node_type)]
    node_type: Option<NodeType>,
    #[arg(long, global = true)]
    min_pair_count: Option<u64>,
    /// Embedding dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Training epochs per snapshot.
    #[arg(long, global = true)]
    train_epochs: Option<usize>,
    /// Neighborhood sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Overlap gaps, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    deltas: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sequence_lengths: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    training_lengths: Option<Vec<usize>>,
    #[arg(long, global = true)]
    forecast_epochs: Option<usize>,
    /// Smooth raw coordinates instead of step-normalized ones.
    #[arg(long, global = true)]
    no_normalize: bool,
    /// Export velocities at every timestamp, not just the last.
    #[arg(long, global = true)]
    velocity_all: bool,
    /// Any other setting, as a dotted TOML path: `--set train.dim=32`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn parse_node_type(s: &str) -> std::result::Result<NodeType, String> {
    s.parse::<NodeType>().map_err(|e| e.to_string())
}

/// Apply `key.path=value` to a TOML table. The value is parsed as TOML and
/// falls back to a plain string.
fn set_path(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("--set {key}: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn build_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if !o.set.is_empty() {
        let mut table: toml::Table = toml::from_str(&cfg.to_toml()?)
            .map_err(|e| Error::Config(format!("re-reading configuration: {e}")))?;
        for s in &o.set {
            set_path(&mut table, s)?;
        }
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        cfg = PipelineConfig::from_toml(&text)?;
    }
    if let Some(v) = o.threads {
        cfg.threads = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &o.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = o.node_type {
        cfg.node_type = v;
    }
    if let Some(v) = o.min_pair_count {
        cfg.min_pair_count = v;
    }
    if let Some(v) = o.dim {
        cfg.train.dim = v;
    }
    if let Some(v) = o.train_epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = &o.ks {
        cfg.analysis.ks = v.clone();
    }
    if let Some(v) = &o.deltas {
        cfg.analysis.deltas = v.clone();
    }
    if let Some(v) = &o.sequence_lengths {
        cfg.grid.sequence_lengths = v.clone();
    }
    if let Some(v) = &o.training_lengths {
        cfg.grid.training_lengths = v.clone();
    }
    if let Some(v) = o.forecast_epochs {
        cfg.forecast.epochs = v;
    }
    if o.no_normalize {
        cfg.smooth.normalize = false;
    }
    if o.velocity_all {
        cfg.analysis.velocity_all = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage_of(c: &Command) -> Option<Stage> {
    Some(match c {
        Command::Gen => Stage::Gen,
        Command::Ingest => Stage::Ingest,
        Command::Project => Stage::Project,
        Command::Train => Stage::Train,
        Command::Shift => Stage::Shift,
        Command::Neighborhoods => Stage::Neighborhoods,
        Command::Smooth => Stage::Smooth,
        Command::Velocity => Stage::Velocity,
        Command::Forecast => Stage::Forecast,
        Command::Report => Stage::Report,
        Command::All | Command::Config => return None,
    })
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(&cli.opts)?;
    match &cli.command {
        Command::Config => print!("{}", cfg.effective().to_toml()?),
        Command::All => {
            for m in run_all(&cfg)? {
                println!("{}: {} outputs", m.stage, m.outputs.len());
            }
        }
        c => {
            let stage = stage_of(c).expect("stage subcommand");
            let m = run_stage(stage, &cfg)?;
            println!("{}: {} outputs", m.stage, m.outputs.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.opts.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
