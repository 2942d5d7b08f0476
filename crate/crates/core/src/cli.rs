//! Command-line front end. Every subcommand also accepts `--config FILE`, a
//! JSON object keyed by flag names; flags given on the command line win.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::coco::{export_samples, read_results, split_train_test, write_results, CocoDataset, CocoInfo, CocoResult};
use crate::error::{Error, Result};
use crate::eval::{default_thresholds, evaluate, group_results, render_table, IouKind};
use crate::netpbm::GrayImage;
use crate::segment::{
    segment, train, Backend, BackendKind, ProtoConfig, ProtoModel, ThresholdConfig, ThresholdMode, TrainConfig,
    TrainingSet,
};
use crate::synth::{generate_dataset, ScenarioMix, SceneGeometry};
use crate::video::{bench, run_video, FrameSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fluoroseg", version, about = "Synthetic knee fluoroscopy segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset: PGM frames plus COCO annotations.
    Generate(GenerateArgs),
    /// Split a COCO file into train and test files by image.
    Split(SplitArgs),
    /// Train the prototype-mask network.
    Train(TrainArgs),
    /// Segment one frame or every image of a COCO file.
    Segment(SegmentArgs),
    /// Score predictions against ground truth over IoU thresholds.
    Eval(EvalArgs),
    /// Segment a directory of numbered frames.
    Video(VideoArgs),
    /// Measure throughput on in-memory synthetic frames.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct GenerateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scenario mix such as `clean=0.5,overlap=0.5`.
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Square frame size in pixels.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct SplitArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// COCO annotations file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to `train.json` next to the input.
    #[arg(long)]
    out_train: Option<PathBuf>,
    /// Defaults to `test.json` next to the input.
    #[arg(long)]
    out_test: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// COCO annotations file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Frame directory; defaults to `images/` next to the annotations.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_ckpt: Option<PathBuf>,
    /// Loss trace CSV; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize, Clone)]
struct BackendArgs {
    /// `threshold` or `proto`.
    #[arg(long)]
    backend: Option<String>,
    /// Checkpoint for the proto backend.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    conf: Option<f64>,
    #[arg(long)]
    nms: Option<f64>,
    /// `auto` or a grey level.
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    morph_radius: Option<usize>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct SegmentArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// A `.pgm` frame or a COCO annotations file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Frame directory for a COCO input; defaults to `images/` next to it.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Results file (COCO results format).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    preds: Option<PathBuf>,
    /// Comma-separated IoU thresholds; default 0.50:0.05:0.95.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    class_agnostic: Option<bool>,
    /// JSON report path; defaults to `<preds>.report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct VideoArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Directory of numbered `.pgm` frames.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    overlay: Option<bool>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct BenchArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    backend: BackendArgs,
}

/// Overlays the non-null flag values on the config file's object. Keys
/// may use `-` or `_`; unknown keys are rejected.
fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let Value::Object(flag_values) = serde_json::to_value(flags)? else {
        return Err(Error::Config("flags do not form an object".into()));
    };
    let mut merged = Map::new();
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text)? {
            Value::Object(obj) => {
                for (k, v) in obj {
                    let key = k.replace('-', "_");
                    if !flag_values.contains_key(&key) {
                        return Err(Error::Config(format!("unknown key {k:?} in {}", path.display())));
                    }
                    merged.insert(key, v);
                }
            }
            _ => return Err(Error::Config(format!("config {} is not a JSON object", path.display()))),
        }
    }
    merged.extend(flag_values.into_iter().filter(|(_, v)| !v.is_null()));
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("bad configuration: {e}")))
}

fn echo(command: &str, effective: &impl Serialize) -> Result<()> {
    eprintln!("{command} effective config: {}", serde_json::to_string(effective)?);
    Ok(())
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn parse_threshold(s: &str) -> Result<ThresholdMode> {
    if s == "auto" {
        return Ok(ThresholdMode::Auto);
    }
    s.parse::<u8>()
        .map(ThresholdMode::Fixed)
        .map_err(|_| Error::Config(format!("threshold {s:?} is neither `auto` nor 0-255")))
}

impl BackendArgs {
    fn fill_defaults(&mut self, default_backend: &str) {
        self.backend.get_or_insert_with(|| default_backend.into());
        let p = ProtoConfig::default();
        let t = ThresholdConfig::default();
        self.conf.get_or_insert(p.conf_thresh);
        self.nms.get_or_insert(p.nms_iou);
        self.threshold.get_or_insert_with(|| "auto".into());
        self.min_area.get_or_insert(t.min_area);
        self.morph_radius.get_or_insert(t.morph_radius);
    }

    /// `fallback_model` stands in when no checkpoint is given (bench only).
    fn build(&self, fallback_model: Option<ProtoModel>) -> Result<Backend> {
        let kind: BackendKind = self.backend.as_deref().unwrap_or("threshold").parse()?;
        match kind {
            BackendKind::Threshold => Ok(Backend::Threshold(ThresholdConfig {
                threshold: parse_threshold(self.threshold.as_deref().unwrap_or("auto"))?,
                min_area: self.min_area.unwrap_or_default(),
                morph_radius: self.morph_radius.unwrap_or_default(),
                ..ThresholdConfig::default()
            })),
            BackendKind::Proto => {
                let model = match (&self.ckpt, fallback_model) {
                    (Some(path), _) => ProtoModel::load(path).map_err(|e| match e {
                        Error::Io(io) => Error::Config(format!("cannot open checkpoint {}: {io}", path.display())),
                        other => other,
                    })?,
                    (None, Some(m)) => m,
                    (None, None) => return Err(Error::Config("--ckpt is required for the proto backend".into())),
                };
                let cfg = ProtoConfig {
                    conf_thresh: self.conf.unwrap_or(0.5),
                    nms_iou: self.nms.unwrap_or(0.5),
                };
                if !(0.0..=1.0).contains(&cfg.conf_thresh) || !(0.0..=1.0).contains(&cfg.nms_iou) {
                    return Err(Error::Config("--conf and --nms must lie in [0, 1]".into()));
                }
                Ok(Backend::Proto(model, cfg))
            }
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    a.n.get_or_insert(100);
    a.mix.get_or_insert_with(|| "clean=1.0".into());
    a.seed.get_or_insert(0);
    a.size.get_or_insert(256);
    echo("generate", &a)?;
    let out = required(a.out, "out")?;
    let mix: ScenarioMix = a.mix.unwrap().parse()?;
    let (n, seed, size) = (a.n.unwrap(), a.seed.unwrap(), a.size.unwrap());
    if size == 0 {
        return Err(Error::Config("--size must be positive".into()));
    }
    let samples = generate_dataset(n, &mix, seed, &SceneGeometry::standard(size))?;
    let ds = export_samples(&out, &samples, Some(CocoInfo::generated(seed)))?;
    println!(
        "wrote {} images, {} annotations to {}",
        ds.images.len(),
        ds.annotations.len(),
        out.display()
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    a.train_fraction.get_or_insert(0.9);
    a.seed.get_or_insert(0);
    let data = required(a.data.clone(), "data")?;
    a.out_train.get_or_insert_with(|| sibling(&data, "train.json"));
    a.out_test.get_or_insert_with(|| sibling(&data, "test.json"));
    echo("split", &a)?;
    let ds = CocoDataset::read(&data)?;
    let (train, test) = split_train_test(&ds, a.train_fraction.unwrap(), a.seed.unwrap())?;
    train.write(a.out_train.as_ref().unwrap())?;
    test.write(a.out_test.as_ref().unwrap())?;
    println!("train {} images, test {} images", train.images.len(), test.images.len());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    let defaults = TrainConfig::default();
    let data = required(a.data.clone(), "data")?;
    let ckpt = required(a.out_ckpt.clone(), "out-ckpt")?;
    a.images.get_or_insert_with(|| sibling(&data, "images"));
    a.iters.get_or_insert(defaults.iterations);
    a.batch.get_or_insert(defaults.batch_size);
    a.lr.get_or_insert(defaults.lr);
    a.momentum.get_or_insert(defaults.momentum);
    a.seed.get_or_insert(defaults.seed);
    a.trace.get_or_insert_with(|| ckpt.with_extension("csv"));
    echo("train", &a)?;

    let cfg = TrainConfig {
        iterations: a.iters.unwrap(),
        batch_size: a.batch.unwrap(),
        lr: a.lr.unwrap(),
        momentum: a.momentum.unwrap(),
        seed: a.seed.unwrap(),
        ..defaults
    };
    cfg.validate()?;
    let ds = CocoDataset::read(&data)?;
    let set = TrainingSet::load(&ds, a.images.as_ref().unwrap()).map_err(|e| match e {
        Error::Shape(m) => Error::Validation(m),
        other => other,
    })?;
    let mut model = ProtoModel::init(cfg.seed);
    let trace = train(&mut model, &set, &cfg)?;
    model.save(&ckpt)?;
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    fs::write(a.trace.as_ref().unwrap(), csv)?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!("trained {} iterations: loss {first:.4} -> {last:.4}", trace.len());
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    a.backend.fill_defaults("threshold");
    let input = required(a.input.clone(), "input")?;
    let out = required(a.out.clone(), "out")?;
    let is_frame = input.extension().and_then(|e| e.to_str()) == Some("pgm");
    if !is_frame {
        a.images.get_or_insert_with(|| sibling(&input, "images"));
    }
    echo("segment", &a)?;
    let backend = a.backend.build(None)?;

    let frames: Vec<(u64, PathBuf)> = if is_frame {
        vec![(1, input.clone())]
    } else {
        let ds = CocoDataset::read(&input)?;
        let dir = a.images.as_ref().unwrap();
        ds.images.iter().map(|i| (i.id, dir.join(&i.file_name))).collect()
    };
    let mut results: Vec<CocoResult> = Vec::new();
    for (id, path) in &frames {
        let img = GrayImage::read_pgm(path).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
            other => other,
        })?;
        results.extend(segment(&backend, &img)?.iter().map(|d| d.to_result(*id)));
    }
    write_results(&out, &results)?;
    println!("{} detections on {} image(s) -> {}", results.len(), frames.len(), out.display());
    Ok(())
}

fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad IoU threshold {t:?}")))
        })
        .collect()
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    let truth = required(a.truth.clone(), "truth")?;
    let preds_path = required(a.preds.clone(), "preds")?;
    a.thresholds.get_or_insert_with(|| {
        default_thresholds().iter().map(|t| format!("{t:.2}")).collect::<Vec<_>>().join(",")
    });
    a.class_agnostic.get_or_insert(false);
    a.out.get_or_insert_with(|| preds_path.with_extension("report.json"));
    echo("eval", &a)?;

    let thresholds = parse_thresholds(a.thresholds.as_ref().unwrap())?;
    let ds = CocoDataset::read(&truth)?;
    let preds = group_results(&read_results(&preds_path)?)?;
    let report = evaluate(&preds, &ds, &thresholds, &IouKind::BOTH, a.class_agnostic.unwrap())?;
    print!("{}", render_table(&report)?);
    fs::write(a.out.as_ref().unwrap(), serde_json::to_string_pretty(&report.to_json())?)?;
    Ok(())
}

fn cmd_video(args: VideoArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    a.backend.fill_defaults("threshold");
    let frames = required(a.frames.clone(), "frames")?;
    let out = required(a.out.clone(), "out")?;
    a.overlay.get_or_insert(false);
    a.workers.get_or_insert(1);
    echo("video", &a)?;
    let backend = a.backend.build(None)?;
    let src = FrameSource::open(&frames)?;
    let run = run_video(&src, &backend, Some(&out), a.overlay.unwrap(), a.workers.unwrap())?;
    println!("{}", run.report.summary());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    a.backend.fill_defaults("threshold");
    a.size.get_or_insert(256);
    a.frames.get_or_insert(100);
    a.workers.get_or_insert(1);
    a.seed.get_or_insert(0);
    echo("bench", &a)?;
    // weights barely affect speed, so an untrained model stands in without --ckpt
    let backend = a.backend.build(Some(ProtoModel::init(a.seed.unwrap())))?;
    let run = bench(&backend, a.size.unwrap(), a.frames.unwrap(), a.workers.unwrap(), a.seed.unwrap())?;
    println!("{}", run.report.summary());
    let json = serde_json::to_string_pretty(&run.report)?;
    match &a.out {
        Some(path) => fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Exit code for an error: 2 for bad input, 3 for failures while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Run(_) | Error::Numeric(_) | Error::State(_) => EXIT_RUNTIME,
        Error::Io(e) if e.kind() != std::io::ErrorKind::NotFound => EXIT_RUNTIME,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Video(a) => cmd_video(a),
        Command::Bench(a) => cmd_bench(a),
    };
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
