use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voxface::dataset::{load_track, write_synth_dataset, write_track, ClipData, DatasetManifest, Split};
use voxface::frontend::{clip_windows, load_wav, write_feature_dump, FeatureConfig, FeatureExtractor, SAMPLES_PER_FRAME};
use voxface::inference::{
    bench, blink_inject, infer_track, retarget, stream_infer, write_rig_track, BlinkConfig, RigMap,
};
use voxface::network::ModelConfig;
use voxface::objectives::{rmse, LossConfig};
use voxface::trainer::{load_checkpoint, train_with_progress, TrainConfig};
use voxface::{Error, Result};

#[derive(Parser)]
#[command(name = "voxface", version, about = "Speech-driven blendshape animation")]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the feature windows of a WAV file.
    Features(FeaturesArgs),
    /// Generate a synthetic dataset with a known oracle.
    Synth(SynthArgs),
    /// Train a model from a manifest.
    Train(TrainArgs),
    /// Predict a blendshape track for a WAV file.
    Infer(InferArgs),
    /// Compare two tracks.
    Eval(EvalArgs),
    /// Time feature extraction and forward passes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// LPC coefficients instead of MFCCs.
    #[arg(long)]
    lpc: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    minutes: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest of `wav,csv,train|val` lines.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: PathBuf,
    /// LSTM state size.
    #[arg(long, default_value_t = 256, value_parser = parse_nodes)]
    nodes: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long, default_value_t = 1.0)]
    w1: f64,
    #[arg(long, default_value_t = 0.5)]
    w2: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    unidirectional: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overlay periodic eye blinks.
    #[arg(long)]
    blink: bool,
    /// Retarget onto another rig with this map.
    #[arg(long, value_name = "FILE")]
    rigmap: Option<PathBuf>,
    /// Feed the audio through the streaming path and report latency.
    #[arg(long)]
    stream: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 300)]
    windows: usize,
    /// Also write per-window timings as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

fn parse_nodes(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n @ (128 | 256 | 512)) => Ok(n),
        _ => Err(format!("expected 128, 256 or 512, got {s}")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.into(), source: e }
}

fn features(a: FeaturesArgs) -> Result<()> {
    let cfg = if a.lpc { FeatureConfig::lpc() } else { FeatureConfig::default() };
    let clip = load_wav(&a.wav)?;
    let windows = clip_windows(&clip, &cfg)?;
    let mut out = create(&a.out)?;
    write_feature_dump(&mut out, &windows, cfg.coeff_count()).map_err(io_at(&a.out))?;
    out.flush().map_err(io_at(&a.out))?;
    println!("windows={} cols={}", windows.len(), cfg.coeff_count());
    Ok(())
}

fn synth(a: SynthArgs, seed: u64) -> Result<()> {
    let s = write_synth_dataset(seed, a.minutes, &a.out)?;
    println!("clips={} frames={}", s.clips, s.frames);
    println!("manifest={}", s.manifest_path.display());
    println!("oracle={}", s.oracle_path.display());
    Ok(())
}

fn train(a: TrainArgs, seed: u64) -> Result<()> {
    let manifest = DatasetManifest::load(&a.data)?;
    let features = FeatureConfig::default();
    let extractor = FeatureExtractor::new(&features)?;
    let load = |split: Split| -> Result<Vec<ClipData>> {
        manifest
            .with_split(split)
            .into_iter()
            .map(|e| ClipData::load(e, &extractor))
            .collect()
    };
    let (train_set, val_set) = (load(Split::Train)?, load(Split::Val)?);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed,
        loss: LossConfig {
            w1: a.w1,
            w2: a.w2,
            delta: a.delta,
        },
        model: ModelConfig {
            hidden_size: a.nodes,
            bidirectional: !a.unidirectional,
            use_attention: !a.no_attention,
            ..ModelConfig::default()
        },
        features,
        ..TrainConfig::default()
    };
    eprintln!(
        "training on {} clips ({} frames), validating on {} clips",
        train_set.len(),
        train_set.iter().map(ClipData::len).sum::<usize>(),
        val_set.len()
    );
    let out = train_with_progress(&train_set, &val_set, &cfg, &a.out, |s| {
        eprintln!(
            "epoch {} train_loss={:.6} val_loss={:.6} val_rmse={:.4}",
            s.epoch, s.train_loss, s.val_loss, s.val_rmse
        );
    })?;
    println!("best_epoch={}", out.best_epoch);
    println!("best={}", out.best_path.display());
    println!("final={}", out.final_path.display());
    Ok(())
}

fn infer(a: InferArgs, seed: u64) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let clip = load_wav(&a.wav)?;
    let rig = a.rigmap.as_deref().map(RigMap::load).transpose()?;
    let mut track = if a.stream {
        let blocks = clip.samples().chunks(SAMPLES_PER_FRAME);
        let (track, report) = stream_infer(blocks, &ckpt, |_, _| {})?;
        eprint!("{}", report.table());
        track
    } else {
        infer_track(&clip, &ckpt)?
    };
    if a.blink {
        track = blink_inject(&track, &BlinkConfig::default(), seed)?;
    }
    let mut out = create(&a.out)?;
    match &rig {
        Some(map) => write_rig_track(&mut out, &retarget(&track, map)),
        None => write_track(&mut out, &track),
    }
    .and_then(|_| out.flush())
    .map_err(io_at(&a.out))?;
    println!("frames={}", track.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = load_track(&a.pred)?;
    let reference = load_track(&a.reference)?;
    // A reference may cover fewer frames than the audio it came with.
    let pred = if pred.len() > reference.len() { pred.truncated(reference.len()) } else { pred };
    println!("rmse={:.4}", rmse(&pred, &reference)?);
    Ok(())
}

fn bench_cmd(a: BenchArgs, seed: u64) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let (report, _) = bench(&ckpt, a.windows, seed)?;
    print!("{}", report.table());
    if let Some(path) = &a.csv {
        std::fs::write(path, report.to_csv()).map_err(io_at(path))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Features(a) => features(a),
        Command::Synth(a) => synth(a, cli.seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Infer(a) => infer(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a, cli.seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

