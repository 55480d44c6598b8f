//! `tbnlab` — generate synthetic multimodal datasets, train and evaluate
//! binding-window fusion models, sweep window widths and verify gradients.
//!
//! Every command is deterministic given `--seed` and its configuration; the
//! effective configuration is written next to each command's outputs.
//! Exit codes: 0 success, 1 validation error, 2 runtime (I/O) error.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CompanionMode, RunConfig};
use tbn_core::model::{FusionKind, ScoreMode};

#[derive(Parser)]
#[command(name = "tbnlab", version, about = "Asynchronous multimodal fusion lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Master seed for all random sub-streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
        /// Verb class count.
        #[arg(long)]
        classes: Option<usize>,
        /// Training samples per class.
        #[arg(long)]
        samples_per_class: Option<usize>,
        /// Held-out samples per class.
        #[arg(long)]
        test_samples_per_class: Option<usize>,
        /// Temporal offset between consecutive modalities as a fraction of
        /// the segment duration.
        #[arg(long)]
        offset: Option<f64>,
        /// Gaussian noise level.
        #[arg(long)]
        noise: Option<f64>,
        /// Segment duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Class-irrelevant events per second in the distractor modality.
        #[arg(long)]
        distractor_rate: Option<f64>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Training manifest (JSON lines).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Mid-level fusion strategy: concat, context-gate or gating.
        #[arg(long, value_parser = parse_fusion)]
        fusion: Option<FusionKind>,
        /// Comma-separated modality subset; the first is the anchor.
        #[arg(long, value_delimiter = ',')]
        modalities: Option<Vec<String>>,
        /// Temporal segments K per action.
        #[arg(long)]
        segments: Option<usize>,
        /// Binding-window half-width as a fraction of the duration.
        #[arg(long)]
        tbw_width: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        fused_dim: Option<usize>,
    },
    /// Evaluate a checkpoint (or an ensemble) on a manifest.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Evenly spaced windows per segment.
        #[arg(long)]
        anchors: Option<usize>,
        /// Companion placement: synchronous mapping or draws inside the
        /// checkpoint's binding window.
        #[arg(long, value_enum)]
        companions: Option<CompanionMode>,
        /// Combine per-window logits by mean (logits) or average softmax
        /// scores (softmax).
        #[arg(long, value_parser = parse_score)]
        score: Option<ScoreMode>,
        /// Also report metrics restricted to segments carrying this tag.
        #[arg(long)]
        subset_tag: Option<String>,
        /// Checkpoints to ensemble (mean softmax).
        #[arg(long, num_args = 1..)]
        ensemble: Option<Vec<PathBuf>>,
    },
    /// Sweep the binding-window width with single-window sampling.
    SweepB {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Width labels: sync, T, T/30, 2T/3 or plain fractions.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<String>>,
        /// Repetitions per width.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Verify every layer's gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Deliberately corrupt one backward pass (test fixture).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Convert a waveform stream file into a spectrogram dump.
    Dump {
        #[command(flatten)]
        common: CommonArgs,
        /// Raw little-endian f32 waveform with a JSON sidecar.
        #[arg(long)]
        input: PathBuf,
        /// Window center in seconds (default: the recording midpoint).
        #[arg(long)]
        center: Option<f64>,
        /// Output path for the raw f32 spectrogram.
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_fusion(s: &str) -> Result<FusionKind, String> {
    match s {
        "concat" => Ok(FusionKind::Concat),
        "context-gate" => Ok(FusionKind::ContextGate),
        "gating" => Ok(FusionKind::Gating),
        other => Err(format!("unknown fusion {other:?} (concat, context-gate, gating)")),
    }
}

fn parse_score(s: &str) -> Result<ScoreMode, String> {
    match s {
        "logits" | "mean-logits" => Ok(ScoreMode::MeanLogits),
        "softmax" | "mean-softmax" => Ok(ScoreMode::MeanSoftmax),
        other => Err(format!("unknown score mode {other:?} (logits, softmax)")),
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, tbn_core::Error> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), tbn_core::Error> {
    match cli.command {
        Command::Gen {
            common,
            classes,
            samples_per_class,
            test_samples_per_class,
            offset,
            noise,
            duration,
            distractor_rate,
        } => {
            let mut config = load_config(&common)?;
            if let Some(v) = classes {
                config.synth.n_classes = v;
            }
            if let Some(v) = samples_per_class {
                config.synth.samples_per_class = v;
            }
            if let Some(v) = test_samples_per_class {
                config.synth.test_samples_per_class = v;
            }
            if let Some(v) = offset {
                config.synth.offset_frac = v;
            }
            if let Some(v) = noise {
                config.synth.noise_sigma = v;
            }
            if let Some(v) = duration {
                config.synth.duration = v;
            }
            if let Some(v) = distractor_rate {
                config.synth.distractor_rate = v;
            }
            commands::cmd_gen(&config)
        }
        Command::Train {
            common,
            manifest,
            fusion,
            modalities,
            segments,
            tbw_width,
            epochs,
            lr,
            momentum,
            batch_size,
            dropout,
            feature_dim,
            hidden_dim,
            fused_dim,
        } => {
            let mut config = load_config(&common)?;
            if manifest.is_some() {
                config.manifest = manifest;
            }
            if let Some(v) = fusion {
                config.model.fusion = v;
            }
            if modalities.is_some() {
                config.modalities = modalities;
            }
            if let Some(v) = segments {
                config.tbw.segments = v;
            }
            if let Some(v) = tbw_width {
                config.tbw.width_rel = v;
            }
            if let Some(v) = epochs {
                config.train.epochs = v;
            }
            if let Some(v) = lr {
                config.train.lr = v;
            }
            if let Some(v) = momentum {
                config.train.momentum = v;
            }
            if let Some(v) = batch_size {
                config.train.batch_size = v;
            }
            if let Some(v) = dropout {
                config.model.dropout = v;
            }
            if let Some(v) = feature_dim {
                config.model.feature_dim = v;
            }
            if let Some(v) = hidden_dim {
                config.model.hidden_dim = v;
            }
            if let Some(v) = fused_dim {
                config.model.fused_dim = v;
            }
            commands::cmd_train(&config)
        }
        Command::Eval {
            common,
            checkpoint,
            manifest,
            anchors,
            companions,
            score,
            subset_tag,
            ensemble,
        } => {
            let mut config = load_config(&common)?;
            if checkpoint.is_some() {
                config.checkpoint = checkpoint;
            }
            if manifest.is_some() {
                config.manifest = manifest;
            }
            if anchors.is_some() {
                config.eval.anchors = anchors;
            }
            if let Some(v) = companions {
                config.eval.companions = v;
            }
            if let Some(v) = score {
                config.eval.score = v;
            }
            if subset_tag.is_some() {
                config.eval.subset_tag = subset_tag;
            }
            if let Some(v) = ensemble {
                config.eval.ensemble = v;
            }
            commands::cmd_eval(&config)
        }
        Command::SweepB { common, checkpoint, manifest, widths, runs } => {
            let mut config = load_config(&common)?;
            if checkpoint.is_some() {
                config.checkpoint = checkpoint;
            }
            if manifest.is_some() {
                config.manifest = manifest;
            }
            if let Some(v) = widths {
                config.sweep.widths = v;
            }
            if let Some(v) = runs {
                config.sweep.runs = v;
            }
            commands::cmd_sweep_b(&config)
        }
        Command::Gradcheck { common, corrupt } => {
            let config = load_config(&common)?;
            commands::cmd_gradcheck(&config, corrupt)
        }
        Command::Dump { common, input, center, output } => {
            let config = load_config(&common)?;
            commands::cmd_dump(&config, &input, center, &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}
