use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{report, PipelineConfig, Stage};
use crate::embed::{chain_train, read_snapshot, write_snapshot, EmbeddingSnapshot};
use crate::forecast::{forecast_grid, write_grid_csv, write_regressor};
use crate::graph::{
    ingest, project, read_pairs, window_partition, write_pairs, write_records, ColumnMap, FormatConfig,
    TransactionRecord,
};
use crate::shift::{
    delta_cosine, max_shift_histogram, max_shift_snapshot, overlap_grid, read_series_csv, shift_series,
    top_shifting_category_mix, write_histogram_csv, write_mix_csv, write_overlap_csv, write_series_csv, Metric,
};
use crate::synthgen::{generate, ground_truth};
use crate::trajectory::{smooth_embeddings, velocity, write_velocity_csv};
use crate::{Error, Result};

#[derive(Debug, Default)]
pub(crate) struct StageFiles {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl StageFiles {
    pub(crate) fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn output(&mut self, p: PathBuf) -> PathBuf {
        self.outputs.push(p.clone());
        p
    }
}

pub(crate) fn run(stage: Stage, cfg: &PipelineConfig) -> Result<StageFiles> {
    let mut f = StageFiles::default();
    let out = cfg.out.as_path();
    match stage {
        Stage::Gen => gen(cfg, out, &mut f)?,
        Stage::Ingest => ingest_stage(cfg, out, &mut f)?,
        Stage::Project => project_stage(cfg, out, &mut f)?,
        Stage::Train => train(cfg, out, &mut f)?,
        Stage::Shift => shift(cfg, out, &mut f)?,
        Stage::Neighborhoods => neighborhoods(cfg, out, &mut f)?,
        Stage::Smooth => smooth(cfg, out, &mut f)?,
        Stage::Velocity => velocity_stage(cfg, out, &mut f)?,
        Stage::Forecast => forecast(cfg, out, &mut f)?,
        Stage::Report => report::write(cfg, out, &mut f)?,
    }
    Ok(f)
}

/// `path`, or an error telling the user which stage produces it.
pub(crate) fn require(path: PathBuf, producer: Stage) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path,
            stage: producer.name().to_string(),
        })
    }
}

fn save(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Layout of the record files this pipeline writes itself.
fn own_format() -> FormatConfig {
    FormatConfig {
        delimiter: ',',
        has_header: true,
        columns: ColumnMap::default(),
    }
}

fn read_records(path: &Path) -> Result<Vec<TransactionRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let report = ingest(file, &own_format())?;
    if let Some(e) = report.errors.first() {
        return Err(Error::Data(format!(
            "{}:{}: {} (file written by an earlier stage was modified?)",
            path.display(),
            e.line,
            e.message
        )));
    }
    Ok(report.records)
}

fn gen(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let dir = out.join(Stage::Gen.dir());
    let records = generate(&cfg.world)?;
    log::info!("generated {} transactions", records.len());
    write_records(&f.output(dir.join("transactions.csv")), &records)?;
    save(&f.output(dir.join("world.toml")), &cfg.world.to_toml()?)?;
    let truth = ground_truth(&cfg.world)?;
    let json = serde_json::to_string_pretty(&truth).map_err(|e| Error::Data(e.to_string()))?;
    save(&f.output(dir.join("ground_truth.json")), &(json + "\n"))
}

fn ingest_stage(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let dir = out.join(Stage::Ingest.dir());
    let (source, format) = match &cfg.input {
        Some(p) if p.is_file() => (p.clone(), cfg.format.clone()),
        Some(p) => return Err(Error::Config(format!("input file {} does not exist", p.display()))),
        None => (
            require(out.join(Stage::Gen.dir()).join("transactions.csv"), Stage::Gen)?,
            own_format(),
        ),
    };
    f.input(&source);
    let file = fs::File::open(&source).map_err(|e| Error::io(&source, e))?;
    let report = ingest(file, &format)?;
    if !report.errors.is_empty() {
        log::warn!("{}: {} malformed lines skipped", source.display(), report.errors.len());
    }
    if report.records.is_empty() {
        return Err(Error::Data(format!("{}: no valid records", source.display())));
    }
    write_records(&f.output(dir.join("records.csv")), &report.records)?;

    let path = f.output(dir.join("errors.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["line", "message"]).map_err(|e| csv_err(&path, e))?;
    for e in &report.errors {
        w.write_record([e.line.to_string(), e.message.clone()])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = f.output(dir.join("categories.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["node_id", "category"]).map_err(|e| csv_err(&path, e))?;
    for (id, c) in node_categories(&report.records, cfg) {
        w.write_record([id, c]).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Each node's most frequent non-empty category; ties go to the smallest name.
fn node_categories(records: &[TransactionRecord], cfg: &PipelineConfig) -> BTreeMap<String, String> {
    let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.category.is_empty()) {
        *counts
            .entry(r.node(cfg.node_type))
            .or_default()
            .entry(r.category.as_str())
            .or_insert(0) += 1;
    }
    counts
        .into_iter()
        .filter_map(|(id, cs)| {
            let best = cs.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))?;
            Some((id.to_string(), best.0.to_string()))
        })
        .collect()
}

pub(crate) fn read_categories(out: &Path) -> Result<(PathBuf, BTreeMap<String, String>)> {
    let path = require(out.join(Stage::Ingest.dir()).join("categories.csv"), Stage::Ingest)?;
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let map = r
        .deserialize::<(String, String)>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(&path, e))?;
    Ok((path, map))
}

fn project_stage(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let dir = out.join(Stage::Project.dir());
    let src = require(out.join(Stage::Ingest.dir()).join("records.csv"), Stage::Ingest)?;
    f.input(&src);
    let records = read_records(&src)?;
    let parts = window_partition(&records, &cfg.window)?;
    let mut index = String::from("index,start,end,records,pairs,total\n");
    for p in &parts {
        let mut pairs = project(&p.records, p.window, cfg.node_type);
        pairs.trim(cfg.min_pair_count);
        let path = f.output(dir.join(format!("window_{:03}.tsv", p.window.index)));
        write_pairs(&pairs, &path)?;
        let mut meta = path.into_os_string();
        meta.push(".meta");
        f.output(meta.into());
        let _ = writeln!(
            index,
            "{},{},{},{},{},{}",
            p.window.index,
            p.window.start.to_rfc3339(),
            p.window.end.to_rfc3339(),
            p.records.len(),
            pairs.len(),
            pairs.total()
        );
    }
    save(&f.output(dir.join("windows.csv")), &index)
}

/// Files named `<prefix>NNN<suffix>` in `dir`, sorted by `NNN`.
fn numbered_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<PathBuf>> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(Vec::new());
    };
    let mut found = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(n) = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(suffix))
            .and_then(|n| n.parse::<usize>().ok())
        {
            found.push((n, e.path()));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn train(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let src = out.join(Stage::Project.dir());
    let index = require(src.join("windows.csv"), Stage::Project)?;
    f.input(&index);
    let files = numbered_files(&src, "window_", ".tsv")?;
    if files.is_empty() {
        return Err(Error::MissingArtifact {
            path: src.join("window_000.tsv"),
            stage: Stage::Project.name().into(),
        });
    }
    let mut pairs = Vec::with_capacity(files.len());
    for p in &files {
        f.input(p);
        pairs.push(read_pairs(p)?);
    }
    let snaps = chain_train(&pairs, &cfg.train)?;
    let dir = out.join(Stage::Train.dir());
    for s in &snaps {
        write_snapshot(s, &f.output(dir.join(format!("snapshot_{:03}.txt", s.timestamp_index))))?;
    }
    Ok(())
}

/// All snapshots written by `producer`, in order.
pub(crate) fn load_snapshots(out: &Path, producer: Stage, f: &mut StageFiles) -> Result<Vec<EmbeddingSnapshot>> {
    let dir = out.join(producer.dir());
    let files = numbered_files(&dir, "snapshot_", ".txt")?;
    if files.is_empty() {
        return Err(Error::MissingArtifact {
            path: dir.join("snapshot_000.txt"),
            stage: producer.name().into(),
        });
    }
    files
        .iter()
        .map(|p| {
            f.input(p);
            read_snapshot(p)
        })
        .collect()
}

fn need_snapshots(snaps: &[EmbeddingSnapshot], n: usize, stage: Stage) -> Result<()> {
    if snaps.len() < n {
        return Err(Error::Data(format!(
            "stage `{stage}` needs at least {n} snapshots, found {}",
            snaps.len()
        )));
    }
    Ok(())
}

fn shift(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let snaps = load_snapshots(out, Stage::Train, f)?;
    need_snapshots(&snaps, 2, Stage::Shift)?;
    let (cat_path, categories) = read_categories(out)?;
    f.input(&cat_path);
    let dir = out.join(Stage::Shift.dir());

    let magnitude = shift_series(&snaps, Metric::Magnitude, 1)?;
    write_series_csv(&f.output(dir.join("magnitude.csv")), &magnitude)?;
    let cosine = shift_series(&snaps, Metric::Cosine, 1)?;
    write_series_csv(&f.output(dir.join("cosine.csv")), &cosine)?;

    let max = max_shift_snapshot(&magnitude);
    let mut text = String::from("node_id,t\n");
    for (id, t) in &max.months {
        let _ = writeln!(text, "{id},{t}");
    }
    save(&f.output(dir.join("max_shift.csv")), &text)?;
    write_histogram_csv(&f.output(dir.join("max_shift_histogram.csv")), &max_shift_histogram(&max))?;

    let mut by_category: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for (id, &t) in &max.months {
        let c = categories.get(id).map(String::as_str).unwrap_or("unknown");
        *by_category.entry((c, t)).or_insert(0) += 1;
    }
    let mut text = String::from("category,t,count\n");
    for ((c, t), n) in by_category {
        let _ = writeln!(text, "{c},{t},{n}");
    }
    save(&f.output(dir.join("category_max_shift.csv")), &text)?;

    let mut mixes = Vec::new();
    for t in 1..snaps.len() {
        let w = cfg.analysis.min_pair_weight;
        let eligible = top_shifting_category_mix(&snaps, t, 0, &categories, w)?.n_eligible;
        let n_top = (cfg.analysis.top_fraction * eligible as f64).ceil() as usize;
        mixes.push(top_shifting_category_mix(&snaps, t, n_top, &categories, w)?);
    }
    write_mix_csv(&f.output(dir.join("category_mix.csv")), &mixes)?;
    let mut text = String::from("t,n_top,n_eligible\n");
    for m in &mixes {
        let _ = writeln!(text, "{},{},{}", m.t, m.n_top, m.n_eligible);
    }
    save(&f.output(dir.join("category_mix_counts.csv")), &text)
}

fn neighborhoods(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let snaps = load_snapshots(out, Stage::Train, f)?;
    need_snapshots(&snaps, 2, Stage::Neighborhoods)?;
    let deltas: Vec<usize> = cfg
        .analysis
        .deltas
        .iter()
        .copied()
        .filter(|&d| d < snaps.len())
        .collect();
    if deltas.len() < cfg.analysis.deltas.len() {
        log::warn!("overlap gaps of {} or more snapshots skipped", snaps.len());
    }
    let points = overlap_grid(&snaps, &cfg.analysis.ks, &deltas)?;
    write_overlap_csv(&f.output(out.join(Stage::Neighborhoods.dir()).join("overlap.csv")), &points)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

fn smooth(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let raw = load_snapshots(out, Stage::Train, f)?;
    let sm = smooth_embeddings(&raw, &cfg.smooth)?;
    let dir = out.join(Stage::Smooth.dir());
    for s in &sm.snapshots {
        write_snapshot(s, &f.output(dir.join(format!("snapshot_{:03}.txt", s.timestamp_index))))?;
    }
    let mut text = String::new();
    for id in &sm.passthrough {
        let _ = writeln!(text, "{id}");
    }
    save(&f.output(dir.join("passthrough.txt")), &text)?;

    // Cosine shift of nodes trained at t that also existed at t - 1 and were
    // smoothed, raw next to smoothed.
    let mut text = String::from("t,eligible,raw_mean,raw_var,smoothed_mean,smoothed_var\n");
    for t in 1..raw.len() {
        let (mut r, mut s) = (Vec::new(), Vec::new());
        for (id, &w) in raw[t].updated() {
            if w < cfg.analysis.min_pair_weight || sm.passthrough.contains(id) {
                continue;
            }
            let (Some(a), Some(b)) = (raw[t].vector(id), raw[t - 1].vector(id)) else {
                continue;
            };
            let (Some(c), Some(d)) = (sm.snapshots[t].vector(id), sm.snapshots[t - 1].vector(id)) else {
                continue;
            };
            r.push(delta_cosine(a, b)?);
            s.push(delta_cosine(c, d)?);
        }
        let ((rm, rv), (sm_, sv)) = (mean_var(&r), mean_var(&s));
        let _ = writeln!(text, "{t},{},{rm},{rv},{sm_},{sv}", r.len());
    }
    save(&f.output(dir.join("noise.csv")), &text)
}

fn velocity_stage(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let snaps = load_snapshots(out, Stage::Smooth, f)?;
    let mut v = velocity(&snaps)?;
    if !cfg.analysis.velocity_all {
        let last = snaps.last().map(|s| s.timestamp_index);
        v.retain(|x| Some(x.timestamp_index) == last);
    }
    write_velocity_csv(&f.output(out.join(Stage::Velocity.dir()).join("velocity.csv")), &v)
}

fn forecast(cfg: &PipelineConfig, out: &Path, f: &mut StageFiles) -> Result<()> {
    let index = require(out.join(Stage::Project.dir()).join("windows.csv"), Stage::Project)?;
    f.input(&index);
    let text = fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
    let n_snapshots = text.lines().skip(1).filter(|l| !l.is_empty()).count();
    let src = require(out.join(Stage::Shift.dir()).join("cosine.csv"), Stage::Shift)?;
    f.input(&src);
    let series = read_series_csv(&src, Metric::Cosine, 1, n_snapshots.saturating_sub(1))?;

    let grid = forecast_grid(
        &series,
        &cfg.grid.sequence_lengths,
        &cfg.grid.training_lengths,
        &cfg.forecast,
    )?;
    let dir = out.join(Stage::Forecast.dir());
    write_grid_csv(&f.output(dir.join("grid.csv")), &grid.rows)?;
    let models = dir.join("models");
    mkdir(&models)?;
    for ((l, tr), m) in &grid.models {
        write_regressor(m, &f.output(models.join(format!("lstm_l{l}_t{tr}.txt"))))?;
    }
    Ok(())
}

/// Read a CSV with a header into rows of owned strings.
pub(crate) fn read_table(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| csv_err(path, e))
        })
        .collect()
}

pub(crate) fn modal<T: Ord + Copy>(counts: &BTreeMap<T, usize>) -> Option<T> {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(t, _)| *t)
}

pub(crate) fn shocked_categories(out: &Path) -> Result<Option<(PathBuf, Vec<(usize, BTreeSet<String>)>)>> {
    let path = out.join(Stage::Gen.dir()).join("world.toml");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let world = crate::synthgen::WorldSpec::from_toml(&text)?;
    let shocks = world
        .shocks
        .iter()
        .map(|s| (s.month, s.categories.iter().map(|&c| world.category_name(c)).collect()))
        .collect();
    Ok(Some((path, shocks)))
}
