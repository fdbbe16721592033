mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tbd_core::error::FormatError;
use tbd_core::interp::{attention_precision_recall, dump_sample_masks, entanglement_report, Scope};
use tbd_core::scene::{build_dataset, enumerate_small_scenes, oracle_equivalence, read_dataset, Dataset};
use tbd_core::trainer::{self, evaluate, finetune, load_checkpoint, save_checkpoint, EvalReport};
use tbd_core::Error;

use config::Config;

/// Module networks over attention masks: data, training and inspection.
#[derive(Parser, Debug)]
#[command(
    name = "tbd",
    version,
    after_help = "Environment:\n  TBD_NUM_THREADS  worker threads for training and evaluation (default 1)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene/question dataset
    GenData(GenData),
    /// Train a model from scratch with early stopping
    Train(Train),
    /// Continue training a condition-A model on condition-B data
    Finetune(Finetune),
    /// Per-family answer accuracy of a checkpoint
    Eval(Eval),
    /// Attention precision and recall of a checkpoint
    Interp(Interp),
    /// Write attention masks of one question as P5 (and P6 overlay) images
    DumpMasks(DumpMasks),
    /// Cross-check the symbolic executor against brute force on small scenes
    OracleCheck(OracleCheck),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment configuration
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for data, initialization and shuffling (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_resolution(s: &str) -> Result<usize, String> {
    match s {
        "14" => Ok(14),
        "28" => Ok(28),
        _ => Err(format!("`{s}` is not one of 14, 28")),
    }
}

#[derive(Args, Debug)]
struct GenData {
    #[command(flatten)]
    common: Common,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Feature-map resolution
    #[arg(long, value_parser = parse_resolution, value_name = "14|28")]
    resolution: Option<usize>,
}

#[derive(Args, Debug)]
struct Train {
    #[command(flatten)]
    common: Common,
    /// Output directory for metrics and checkpoints
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Training dataset (overrides `paths.train`)
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Validation dataset (overrides `paths.val`)
    #[arg(long, value_name = "DIR")]
    val: Option<PathBuf>,
    /// Feature-map resolution
    #[arg(long, value_parser = parse_resolution, value_name = "14|28")]
    resolution: Option<usize>,
    /// Weight of the L1 penalty on attention masks
    #[arg(long, value_name = "W")]
    lambda_attn: Option<f64>,
}

#[derive(Args, Debug)]
struct Finetune {
    #[command(flatten)]
    common: Common,
    /// Condition-A checkpoint directory
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Condition-B training dataset
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Condition-A validation dataset (overrides `finetune.val_a`)
    #[arg(long, value_name = "DIR")]
    val_a: Option<PathBuf>,
    /// Condition-B validation dataset (overrides `finetune.val_b`)
    #[arg(long, value_name = "DIR")]
    val_b: Option<PathBuf>,
    /// Shape/color probe dataset for the entanglement report
    #[arg(long, value_name = "DIR")]
    probe: Option<PathBuf>,
    /// Fine-tuning epochs (overrides `finetune.epochs`)
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Eval {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Dataset to score
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Also write the report as `eval.json` here
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Interp {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Dataset with ground-truth sets
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Attention threshold for region extraction
    #[arg(long, value_name = "T")]
    threshold: Option<f64>,
    /// Score Relate and Same masks too
    #[arg(long)]
    all_masks: bool,
    /// Also write per-node scores as `interp.jsonl` here
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DumpMasks {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Dataset holding the question
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Sample index within the dataset
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Also write colormapped overlays on the input image
    #[arg(long)]
    overlay: bool,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OracleCheck {
    /// Board side length
    #[arg(long, default_value_t = 3)]
    grid: usize,
    /// Largest object count
    #[arg(long, default_value_t = 3)]
    max_objects: usize,
    /// Largest program depth
    #[arg(long, default_value_t = 4)]
    depth: usize,
}

fn config_for(common: &Common) -> Result<Config, Error> {
    let mut cfg = Config::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn checked(cfg: &Config) -> Result<(), Error> {
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e).into())
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| FormatError::io(path, e).into())
}

fn open_sink(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path).map_err(|e| FormatError::io(path, e))?))
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    path.ok_or_else(|| Error::Config(format!("no {what} given")))
}

fn load(path: &Path) -> Result<Dataset, Error> {
    read_dataset(path)
}

fn print_report(r: &EvalReport) {
    println!("{:<20} {:>8} {:>8} {:>9}", "family", "correct", "total", "accuracy");
    for (name, f) in &r.families {
        println!("{:<20} {:>8} {:>8} {:>9.4}", name, f.correct, f.total, f.accuracy);
    }
    println!("{:<20} {:>8} {:>8} {:>9.4}", "overall", r.correct, r.total, r.accuracy);
}

fn json_line(value: serde_json::Value) {
    println!("{value}");
}

fn gen_data(a: GenData) -> Result<(), Error> {
    let mut cfg = config_for(&a.common)?;
    if let Some(r) = a.resolution {
        cfg.set_resolution(r);
    }
    checked(&cfg)?;
    let ds = build_dataset(&cfg.data, &a.out)?;
    json_line(json!({"scenes": ds.scenes.len(), "samples": ds.samples.len(), "condition": ds.header.condition}));
    Ok(())
}

fn train(a: Train) -> Result<(), Error> {
    let mut cfg = config_for(&a.common)?;
    if let Some(r) = a.resolution {
        cfg.set_resolution(r);
    }
    if let Some(l) = a.lambda_attn {
        cfg.train.lambda_attn = l;
    }
    if a.data.is_some() {
        cfg.paths.train = a.data;
    }
    if a.val.is_some() {
        cfg.paths.val = a.val;
    }
    checked(&cfg)?;
    let train_ds = load(&required(cfg.paths.train.clone(), "training dataset (--data)")?)?;
    let val_ds = load(&required(cfg.paths.val.clone(), "validation dataset (--val)")?)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.toml"), &cfg.to_toml())?;
    let mut sink = open_sink(&a.out.join("metrics.jsonl"))?;
    let outcome = trainer::train(cfg.train_config(), &train_ds, &val_ds, &mut sink)?;
    sink.flush().map_err(|e| FormatError::io(a.out.join("metrics.jsonl"), e))?;
    save_checkpoint(&outcome.best, &a.out.join("best"))?;
    save_checkpoint(&outcome.last, &a.out.join("last"))?;
    json_line(json!({"epochs": outcome.last.epoch, "best_epoch": outcome.best.epoch, "best_val_accuracy": outcome.best.best_val_accuracy}));
    Ok(())
}

fn run_finetune(a: Finetune) -> Result<(), Error> {
    let mut cfg = config_for(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.finetune.epochs = e;
    }
    for (flag, slot) in [(a.val_a, &mut cfg.finetune.val_a), (a.val_b, &mut cfg.finetune.val_b), (a.probe, &mut cfg.finetune.probe)] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    checked(&cfg)?;
    let mut ckpt = load_checkpoint(&a.checkpoint)?;
    if let Some(s) = a.common.seed {
        ckpt.config.train.seed = s;
    }
    let b_train = load(&a.data)?;
    let val_a = load(&required(cfg.finetune.val_a.clone(), "condition-A validation set (--val-a)")?)?;
    let val_b = load(&required(cfg.finetune.val_b.clone(), "condition-B validation set (--val-b)")?)?;
    let probe = cfg.finetune.probe.as_deref().map(load).transpose()?;
    create_dir(&a.out)?;
    let base = ckpt.registry.clone();
    let mut sink = open_sink(&a.out.join("metrics.jsonl"))?;
    let r = finetune(ckpt, cfg.finetune.epochs, &b_train, &val_a, &val_b, &mut sink)?;
    sink.flush().map_err(|e| FormatError::io(a.out.join("metrics.jsonl"), e))?;
    save_checkpoint(&r.outcome.best, &a.out.join("best"))?;
    let entanglement = match &probe {
        Some(p) => Some(entanglement_report(&[("before", &base), ("after", &r.outcome.best.registry)], p)?),
        None => None,
    };
    let report = json!({
        "before": {"A": r.before_a, "B": r.before_b},
        "after": {"A": r.after_a, "B": r.after_b},
        "entanglement": entanglement,
    });
    write_file(&a.out.join("report.json"), &(serde_json::to_string_pretty(&report).expect("serializable") + "\n"))?;
    json_line(json!({
        "before": {"A": r.before_a.accuracy, "B": r.before_b.accuracy},
        "after": {"A": r.after_a.accuracy, "B": r.after_b.accuracy},
    }));
    Ok(())
}

fn eval(a: Eval) -> Result<(), Error> {
    checked(&config_for(&a.common)?)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load(&a.data)?;
    let r = evaluate(&ckpt.registry, &ds)?;
    print_report(&r);
    if let Some(out) = a.out {
        create_dir(&out)?;
        write_file(&out.join("eval.json"), &(serde_json::to_string_pretty(&r).expect("serializable") + "\n"))?;
    }
    Ok(())
}

fn interp(a: Interp) -> Result<(), Error> {
    let mut cfg = config_for(&a.common)?;
    if let Some(t) = a.threshold {
        cfg.interp.threshold = t;
    }
    if a.all_masks {
        cfg.interp.scope = Scope::LearnedMasks;
    }
    checked(&cfg)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load(&a.data)?;
    let r = attention_precision_recall(&ckpt.registry, &ds, cfg.interp.threshold, cfg.interp.scope)?;
    if let Some(out) = a.out {
        create_dir(&out)?;
        let path = out.join("interp.jsonl");
        let mut sink = open_sink(&path)?;
        r.write_jsonl(&mut sink).and_then(|_| sink.flush()).map_err(|e| FormatError::io(&path, e))?;
    }
    json_line(json!({
        "threshold": r.threshold,
        "scope": r.scope,
        "scored_nodes": r.nodes.len(),
        "skipped_samples": r.skipped_samples,
        "empty_masks": r.empty_masks,
        "micro": r.micro,
        "macro": r.macro_avg,
        "mean_background_mass": r.mean_background_mass,
    }));
    Ok(())
}

fn dump_masks(a: DumpMasks) -> Result<(), Error> {
    checked(&config_for(&a.common)?)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = load(&a.data)?;
    if a.sample >= ds.samples.len() {
        return Err(Error::Dataset(format!("sample {} out of range (dataset has {})", a.sample, ds.samples.len())));
    }
    let files = dump_sample_masks(&ckpt.registry, &ds, a.sample, &a.out, a.overlay)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

fn oracle_check(a: OracleCheck) -> Result<bool, Error> {
    if a.max_objects > a.grid * a.grid {
        return Err(Error::Config(format!("{} objects do not fit a {}x{} grid", a.max_objects, a.grid, a.grid)));
    }
    let scenes = enumerate_small_scenes(a.grid, a.max_objects);
    let r = oracle_equivalence(a.depth, &scenes);
    let pass = r.mismatches == 0;
    println!("scenes {} programs {} cases {} mismatches {}", r.scenes, r.programs, r.cases, r.mismatches);
    for (scene, program) in &r.examples {
        println!("mismatch scene {scene}: {program}");
    }
    println!("{}", if pass { "pass" } else { "fail" });
    Ok(pass)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Finetune(a) => run_finetune(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Interp(a) => interp(a).map(|_| true),
        Command::DumpMasks(a) => dump_masks(a).map(|_| true),
        Command::OracleCheck(a) => oracle_check(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("error: {}: {}", e.category(), one_line(&e.to_string()));
            ExitCode::from(1)
        }
    }
}
