//! Command-line driver for the gaze-graph classification pipeline.
//!
//! Every command is deterministic given its seed, writes only under `--out`,
//! and stamps each artifact with the effective config hash + seed so any
//! output can be traced back to the exact run that produced it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gaze_gnn::bench::{bench_paths, format_bench_report};
use gaze_gnn::checkpoint::{load_model, save_model, CheckpointMeta};
use gaze_gnn::config::{build_run_config, RunConfig};
use gaze_gnn::data::{load_dataset, manifest_path, synth_dataset, PreparedSample};
use gaze_gnn::error::{Error, Result};
use gaze_gnn::metrics::{format_metrics_table, EvalMetrics};
use gaze_gnn::model::Model;
use gaze_gnn::train::{
    drop_table, format_robust_table, robustness_table, thread_cap, train_model, EvalOptions,
    evaluate, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "gazegnn",
    about = "Gaze-guided graph network for image classification: dataset synthesis, \
             training, evaluation, ablation, robustness and benchmarking",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every command; `--set` takes the same dotted keys as the
/// config file (e.g. `--set train.epochs=20`).
#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines with dotted namespaces
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed: drives synthesis, splits, init and shuffles
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,

    /// Override one config key, repeatable (key=value)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", p.display()))
            })?),
            None => None,
        };
        build_run_config(text.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic dataset (images + gaze + manifest)
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of samples (overrides synth.n)
        #[arg(long)]
        n: Option<usize>,
        /// Output dataset directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train on a manifest dataset and save the best checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest (JSON-lines)
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Output directory for checkpoint + reports
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a manifest dataset
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Output directory for the metrics report
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the gaze=on / gaze=off pair at matched seed and epochs
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Noise-robustness sweep of a checkpoint: absolute and drop tables
    Robust {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Graph inspection utilities
    Graph {
        #[command(subcommand)]
        cmd: GraphCmd,
    },
    /// Compare attention-map rasterization vs direct dwell aggregation
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Export one sample's graph (nodes + edges) as JSON
    Dump {
        #[command(flatten)]
        common: Common,
        /// Grayscale image (PGM/PNG)
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        /// Fixation CSV (row,col,duration_ms)
        #[arg(long, value_name = "PATH")]
        gaze: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// Provenance stamp written as run.json next to every artifact set.
#[derive(Serialize)]
struct RunStamp<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
}

fn write_stamp(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let stamp = RunStamp { command, seed: cfg.seed, config_hash: cfg.hash(), config: cfg };
    let json = serde_json::to_string_pretty(&stamp)? + "\n";
    fs::write(out.join("run.json"), json)?;
    Ok(())
}

fn ensure_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Adds provenance fields to a serializable payload before writing.
fn write_json_artifact<T: Serialize>(
    path: &Path,
    cfg: &RunConfig,
    payload: &T,
) -> Result<()> {
    #[derive(Serialize)]
    struct Stamped<'a, T> {
        seed: u64,
        config_hash: String,
        #[serde(flatten)]
        payload: &'a T,
    }
    let stamped = Stamped { seed: cfg.seed, config_hash: cfg.hash(), payload };
    let json = serde_json::to_string_pretty(&stamped)? + "\n";
    fs::write(path, json)?;
    Ok(())
}

fn load_prepared(data: &Path, input_size: usize) -> Result<Vec<PreparedSample>> {
    if !data.exists() {
        return Err(Error::Dataset(format!("manifest not found: {}", data.display())));
    }
    load_dataset(data, input_size)
}

fn cmd_synth(common: &Common, n: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = common.run_config()?;
    if let Some(n) = n {
        cfg.synth.n_samples = n;
    }
    ensure_out(out)?;
    let entries = synth_dataset(&cfg.synth, out)?;
    write_stamp(out, "synth", &cfg)?;
    println!(
        "wrote {} samples ({} classes, {}x{}) under {}",
        entries.len(),
        cfg.synth.classes,
        cfg.synth.side,
        cfg.synth.side,
        out.display()
    );
    println!("manifest: {}", manifest_path(out).display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    best_epoch: usize,
    best_accuracy: f64,
    test_metrics: EvalMetrics,
    history: Vec<gaze_gnn::train::EpochStats>,
}

fn cmd_train(common: &Common, data: &Path, out: &Path) -> Result<()> {
    let cfg = common.run_config()?;
    let samples = load_prepared(data, cfg.model.input_size)?;
    ensure_out(out)?;
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    let outcome = train_model(&mut model, &cfg.train, &samples)?;
    let meta = CheckpointMeta { seed: cfg.seed, config_hash: cfg.hash() };
    let file = fs::File::create(out.join("checkpoint.bin"))?;
    save_model(std::io::BufWriter::new(file), &outcome.model, &meta)?;
    let report = TrainReport {
        best_epoch: outcome.best_epoch,
        best_accuracy: outcome.best_accuracy,
        test_metrics: outcome.test_metrics.clone(),
        history: outcome.history.clone(),
    };
    write_json_artifact(&out.join("train.json"), &cfg, &report)?;
    write_stamp(out, "train", &cfg)?;
    println!(
        "best epoch {} (selection accuracy {:.4}); checkpoint: {}",
        outcome.best_epoch,
        outcome.best_accuracy,
        out.join("checkpoint.bin").display()
    );
    print!("{}", format_metrics_table(&[("test", &outcome.test_metrics)]));
    Ok(())
}

fn cmd_eval(common: &Common, data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let cfg = common.run_config()?;
    let file = fs::File::open(checkpoint)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", checkpoint.display())))?;
    let (model, _meta) = load_model(std::io::BufReader::new(file))?;
    let samples = load_prepared(data, model.cfg.input_size)?;
    ensure_out(out)?;
    let opts = EvalOptions {
        gaze: cfg.train.gaze,
        raw_durations: cfg.train.raw_durations,
        noise_sigma: 0.0,
        noise_seed: cfg.robust.noise_seed,
    };
    let (metrics, _) = evaluate(&model, &samples, &opts, thread_cap())?;
    write_json_artifact(&out.join("eval.json"), &cfg, &metrics)?;
    write_stamp(out, "eval", &cfg)?;
    print!("{}", format_metrics_table(&[("eval", &metrics)]));
    Ok(())
}

#[derive(Serialize)]
struct AblateReport {
    rows: Vec<(String, EvalMetrics)>,
    accuracy_gap: f64,
}

fn cmd_ablate(common: &Common, data: &Path, out: &Path) -> Result<()> {
    let cfg = common.run_config()?;
    let samples = load_prepared(data, cfg.model.input_size)?;
    ensure_out(out)?;
    let mut rows = Vec::new();
    for (name, gaze) in [("gaze=on", true), ("gaze=off", false)] {
        let arm = TrainConfig { gaze, ..cfg.train.clone() };
        let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
        let outcome = train_model(&mut model, &arm, &samples)?;
        let meta = CheckpointMeta { seed: cfg.seed, config_hash: cfg.hash() };
        let fname = if gaze { "checkpoint-gaze-on.bin" } else { "checkpoint-gaze-off.bin" };
        let file = fs::File::create(out.join(fname))?;
        save_model(std::io::BufWriter::new(file), &outcome.model, &meta)?;
        rows.push((name.to_string(), outcome.test_metrics.clone()));
    }
    let gap = rows[0].1.accuracy - rows[1].1.accuracy;
    let report = AblateReport { rows: rows.clone(), accuracy_gap: gap };
    write_json_artifact(&out.join("ablation.json"), &cfg, &report)?;
    write_stamp(out, "ablate", &cfg)?;
    let view: Vec<(&str, &EvalMetrics)> =
        rows.iter().map(|(n, m)| (n.as_str(), m)).collect();
    print!("{}", format_metrics_table(&view));
    println!("accuracy gap (on - off): {gap:+.4}");
    Ok(())
}

#[derive(Serialize)]
struct RobustReport {
    gaze: bool,
    absolute: Vec<gaze_gnn::train::RobustRow>,
    drops: Vec<gaze_gnn::train::RobustRow>,
}

fn cmd_robust(common: &Common, data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let cfg = common.run_config()?;
    let file = fs::File::open(checkpoint)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", checkpoint.display())))?;
    let (model, _meta) = load_model(std::io::BufReader::new(file))?;
    let samples = load_prepared(data, model.cfg.input_size)?;
    ensure_out(out)?;
    let mut sigmas = cfg.robust.sigmas.clone();
    if !sigmas.contains(&0.0) {
        sigmas.insert(0, 0.0);
    }
    let absolute = robustness_table(
        &model,
        &samples,
        cfg.train.gaze,
        cfg.train.raw_durations,
        &sigmas,
        cfg.robust.noise_seed,
        cfg.robust.reps,
        thread_cap(),
    )?;
    let drops = drop_table(&absolute)?;
    let report = RobustReport { gaze: cfg.train.gaze, absolute: absolute.clone(), drops: drops.clone() };
    write_json_artifact(&out.join("robust.json"), &cfg, &report)?;
    write_stamp(out, "robust", &cfg)?;
    print!("{}", format_robust_table(&absolute, "metric"));
    print!("{}", format_robust_table(&drops, "drop"));
    Ok(())
}

fn cmd_graph_dump(common: &Common, image: &Path, gaze: &Path, out: &Path) -> Result<()> {
    let cfg = common.run_config()?;
    let (img, h, w) = gaze_gnn::data::load_image_gray(image)?;
    let file = fs::File::open(gaze)
        .map_err(|e| Error::Dataset(format!("cannot open {}: {e}", gaze.display())))?;
    let ingest = gaze_gnn::gaze::ingest_gaze(std::io::BufReader::new(file), h, w)?;
    let raw = gaze_gnn::data::RawSample {
        image: img,
        height: h,
        width: w,
        fixations: ingest.fixations,
        label: 0,
    };
    let prepared = gaze_gnn::data::prepare_sample(&raw, cfg.model.input_size)?;
    let grid = gaze_gnn::gaze::PatchGrid::new(
        cfg.model.input_size,
        cfg.model.input_size,
        cfg.model.patch_size,
    )?;
    let durations = gaze_gnn::data::patch_durations(
        &prepared.fixations,
        &grid,
        cfg.train.raw_durations,
    )?;
    let model = Model::init(cfg.model.clone(), cfg.seed)?;
    let graph = model.build_graph(&prepared.image, &durations)?;
    ensure_out(out)?;
    let f = fs::File::create(out.join("graph.json"))?;
    graph.write_json(std::io::BufWriter::new(f))?;
    write_stamp(out, "graph dump", &cfg)?;
    println!("graph: {}", out.join("graph.json").display());
    Ok(())
}

fn cmd_bench(common: &Common, out: &Path) -> Result<bool> {
    let cfg = common.run_config()?;
    ensure_out(out)?;
    let report = bench_paths(
        cfg.bench.image_size,
        cfg.bench.fixations,
        cfg.bench.sigma,
        cfg.bench.reps,
        &cfg.model,
        cfg.seed,
    )?;
    write_json_artifact(&out.join("bench.json"), &cfg, &report)?;
    write_stamp(out, "bench", &cfg)?;
    print!("{}", format_bench_report(&report));
    println!("note: {}", report.notes);
    let ok = report.passes(cfg.bench.threshold);
    if !ok {
        eprintln!(
            "speedup {:.2}x below threshold {:.2}x",
            report.speedup_median, cfg.bench.threshold
        );
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.cmd {
        Cmd::Synth { common, n, out } => cmd_synth(common, *n, out).map(|()| true),
        Cmd::Train { common, data, out } => cmd_train(common, data, out).map(|()| true),
        Cmd::Eval { common, data, checkpoint, out } => {
            cmd_eval(common, data, checkpoint, out).map(|()| true)
        }
        Cmd::Ablate { common, data, out } => cmd_ablate(common, data, out).map(|()| true),
        Cmd::Robust { common, data, checkpoint, out } => {
            cmd_robust(common, data, checkpoint, out).map(|()| true)
        }
        Cmd::Graph { cmd: GraphCmd::Dump { common, image, gaze, out } } => {
            cmd_graph_dump(common, image, gaze, out).map(|()| true)
        }
        Cmd::Bench { common, out } => cmd_bench(common, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
