//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use stproc_autodiff::checkpoint::peek_dtype;
use stproc_autodiff::{DType, Real};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::featurize::DualView;
use crate::graph::build_global_knn;
use crate::ingest::{load_geolife_dir, make_split, read_store, split_by_user, write_store, CleaningConfig, Segment};
use crate::synthetic::{generate, SyntheticConfig};
use crate::train::{load_model, read_history, render_history, save_model, train, write_history, Precision};
use crate::train::{PreparedData, TrainConfig, TrainedModel};

#[derive(Debug, Parser)]
#[command(
    name = "stproc",
    version,
    about = "Semi-supervised travel-mode identification from GPS trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a GeoLife directory into a segment store.
    Ingest(IngestArgs),
    /// Write the bundled synthetic dataset to a segment store.
    Synth(SynthArgs),
    /// Train a model; writes a checkpoint, the metric history and the held-out test store.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled segment store.
    Eval(EvalArgs),
    /// Write the k-NN graph of a store's teacher embeddings as an edge list.
    DumpGraph(DumpGraphArgs),
    /// Render a metric history and optionally an evaluation report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub geolife_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum points per segment.
    #[arg(long)]
    pub min_len: Option<usize>,
    /// Largest time gap, seconds, before a segment is split.
    #[arg(long)]
    pub max_gap: Option<f64>,
    /// Fixes implying a faster speed, m/s, are dropped.
    #[arg(long)]
    pub max_speed: Option<f64>,
    /// Longer segments are chopped into windows of this many points.
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// TOML file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled segment store. The bundled synthetic dataset, generated from
    /// the seed, is used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub label_ratio: Option<f64>,
    /// Seeds the split, the data generator and training.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the JSON report; next to the checkpoint by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpGraphArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Neighbours per node; the checkpoint's setting when absent.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub history: PathBuf,
    /// JSON report written by `eval`.
    #[arg(long)]
    pub eval: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::DumpGraph(a) => dump_graph(a),
        Command::Report(a) => report(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut cfg = CleaningConfig::default();
    if let Some(v) = a.min_len {
        cfg.min_len = v;
    }
    if let Some(v) = a.max_gap {
        cfg.max_gap_seconds = v;
    }
    if let Some(v) = a.max_speed {
        cfg.max_speed_mps = v;
    }
    if let Some(v) = a.max_len {
        cfg.max_len = v;
    }
    let (segments, stats) = load_geolife_dir(&a.geolife_dir, &cfg)?;
    write_store(&a.out, &segments)?;
    println!("{} segments written to {}", segments.len(), a.out.display());
    println!("{stats:?}");
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => SyntheticConfig::default(),
    };
    if let Some(n) = a.per_class {
        cfg.per_class = n;
    }
    let segments = generate(&cfg, a.seed)?;
    write_store(&a.out, &segments)?;
    println!("{} segments written to {}", segments.len(), a.out.display());
    Ok(())
}

/// Loads the config file and applies the flag overrides.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_toml(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(r) = a.label_ratio {
        cfg.split.label_ratio = r;
    }
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.run.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&a)?;
    let seed = cfg.run.seed;
    let segments = match &a.data {
        Some(p) => read_store(p)?,
        None => generate(&SyntheticConfig::default(), seed)?,
    };
    let (pool, test) = split_by_user(segments, cfg.split.test_user_fraction, seed);
    let split = make_split(pool, test, &cfg.split, seed)?;
    log::info!(
        "{} labeled, {} unlabeled, {} validation, {} test segments",
        split.labeled.len(),
        split.unlabeled.len(),
        split.validation.len(),
        split.test.len()
    );
    let data = PreparedData::from_split(&split, cfg.encoder.t_max)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_text(&a.out.join("config.toml"), &cfg.to_toml())?;
    write_store(&a.out.join("test.store"), &split.test)?;
    match cfg.run.precision {
        Precision::F32 => finish_training::<f32>(&cfg, &data, &split.test, &a.out),
        Precision::F64 => finish_training::<f64>(&cfg, &data, &split.test, &a.out),
    }
}

fn finish_training<T: Real>(cfg: &TrainConfig, data: &PreparedData, test: &[Segment], out: &Path) -> Result<()> {
    let outcome = train::<T>(cfg, data, |r| {
        log::info!(
            "epoch {:>3}  loss {:.4}  accept {:.2}  val {}",
            r.epoch,
            r.loss.total,
            r.pseudo_accept_rate,
            r.val_macro_f1.map_or("-".into(), |f| format!("{f:.4}"))
        );
    })?;
    write_history(&out.join("history.jsonl"), &outcome.history)?;
    save_model(&outcome.model, &out.join("best.ckpt"))?;
    println!(
        "best validation macro-F1 {} after {} epochs; outputs in {}",
        outcome
            .model
            .best_val_macro_f1
            .map_or("-".into(), |f| format!("{f:.4}")),
        outcome.history.len(),
        out.display()
    );
    if !test.is_empty() && test.iter().all(|s| s.label.is_some()) {
        println!("test macro-F1 {:.4}", outcome.model.evaluate(test)?.macro_f1);
    }
    Ok(())
}

fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(peek_dtype(&bytes)?)
}

/// Runs `f` on the checkpoint at `path` loaded at its stored precision.
fn with_model<R>(
    path: &Path,
    f32_fn: impl FnOnce(&TrainedModel<f32>) -> Result<R>,
    f64_fn: impl FnOnce(&TrainedModel<f64>) -> Result<R>,
) -> Result<R> {
    match checkpoint_dtype(path)? {
        DType::F32 => f32_fn(&load_model::<f32>(path)?),
        DType::F64 => f64_fn(&load_model::<f64>(path)?),
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let segments = read_store(&a.data)?;
    let report = with_model(&a.checkpoint, |m| m.evaluate(&segments), |m| m.evaluate(&segments))?;
    println!("{}", report.render());
    let out = a.out.unwrap_or_else(|| a.checkpoint.with_extension("eval.json"));
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Store(e.to_string()))?;
    write_text(&out, &json)?;
    println!("report written to {}", out.display());
    Ok(())
}

fn edge_list<T: Real>(m: &TrainedModel<T>, segments: &[Segment], k: Option<usize>) -> Result<String> {
    let views = segments
        .iter()
        .map(|s| DualView::from_segment(s, m.config.encoder.t_max))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DualView> = views.iter().collect();
    let graph = build_global_knn(&m.embed(&refs)?, k.unwrap_or(m.config.graph.k))?;
    Ok(graph.edge_list())
}

fn dump_graph(a: DumpGraphArgs) -> Result<()> {
    let segments = read_store(&a.data)?;
    let text = with_model(
        &a.checkpoint,
        |m| edge_list(m, &segments, a.k),
        |m| edge_list(m, &segments, a.k),
    )?;
    write_text(&a.out, &text)?;
    println!("{} edges written to {}", text.lines().count(), a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    println!("{}", render_history(&read_history(&a.history)?));
    if let Some(p) = &a.eval {
        let r: EvalReport =
            serde_json::from_str(&read_text(p)?).map_err(|e| Error::Store(format!("{}: {e}", p.display())))?;
        println!("{}", r.render());
    }
    Ok(())
}
