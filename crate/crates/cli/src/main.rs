mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use face2scene_core::refsim::QualityLevel;

#[derive(Parser)]
#[command(name = "face2scene", version, about = "Face-guided scene restoration, toy scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML config; every section is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate toy scenes, degraded variants and a manifest.
    GenData(Common),
    /// Apply a preset degradation to one PNG.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "d1")]
        preset: String,
    },
    /// Train the degradation extractor on the train split.
    TrainFadex(Common),
    /// Cosine-similarity analysis of a trained extractor on fresh toy images.
    AnalyzeFadex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated preset ids.
        #[arg(long, default_value = "d1,d2,d3,d4")]
        presets: String,
        #[arg(long)]
        images: Option<usize>,
    },
    /// Train mapper and restorer against a frozen extractor checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Extractor checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokens: Option<usize>,
        /// Zeroed-token ablation.
        #[arg(long)]
        no_deg: bool,
    },
    /// Restore one scene with a trained model directory.
    Restore {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        infer: InferArgs,
        /// Scene id from the dataset (uses its first variant by default).
        #[arg(long, conflicts_with_all = ["input", "annotation", "reference"])]
        scene: Option<String>,
        #[arg(long, default_value_t = 0)]
        variant: usize,
        #[arg(long, requires_all = ["annotation", "reference"])]
        input: Option<PathBuf>,
        /// JSON face annotation.
        #[arg(long)]
        annotation: Option<PathBuf>,
        /// Clean scene the simulated reference restorer starts from.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Metrics over the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        infer: InferArgs,
    },
    /// Reference-quality sweep and plots.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        infer: InferArgs,
    },
}

#[derive(Args, Clone)]
pub struct InferArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub refq: Option<QualityLevel>,
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long)]
    pub no_deg: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::GenData(c) => commands::gen_data(&c),
        Command::Degrade { common, input, preset } => commands::degrade(&common, &input, &preset),
        Command::TrainFadex(c) => commands::train_fadex(&c),
        Command::AnalyzeFadex {
            common,
            ckpt,
            presets,
            images,
        } => commands::analyze_fadex(&common, &ckpt, &presets, images),
        Command::Train {
            common,
            ckpt,
            tokens,
            no_deg,
        } => commands::train(&common, &ckpt, tokens, no_deg),
        Command::Restore {
            common,
            infer,
            scene,
            variant,
            input,
            annotation,
            reference,
        } => {
            let src = match (scene, input, annotation, reference) {
                (Some(id), ..) => commands::Source::Scene(id, variant),
                (None, Some(i), Some(a), Some(r)) => commands::Source::Files {
                    input: i,
                    annotation: a,
                    reference: r,
                },
                _ => {
                    eprintln!("error: restore needs --scene or --input/--annotation/--reference");
                    return ExitCode::from(2);
                }
            };
            commands::restore(&common, &infer, src)
        }
        Command::Eval { common, infer } => commands::eval(&common, &infer),
        Command::Report { common, infer } => commands::report(&common, &infer),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
