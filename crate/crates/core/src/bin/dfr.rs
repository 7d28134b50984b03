use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dfr::dfr::{Angle, ApplyTo};
use dfr::losses::LossWeights;
use dfr::optim::AdamConfig;
use dfr::pipeline::{self, GridSpec, InitMode, JobSettings};
use dfr::vgg::{PoolMode, VggWeights};
use dfr::{fixture, Error, Result};

#[derive(Parser)]
#[command(name = "dfr", version, about = "Multimodal style transfer by deep feature rotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stylize one content/style pair over an (angle × lambda) grid.
    Run(RunArgs),
    /// Write a random-weight VGG19 file for smoke tests (no pretrained weights needed).
    SynthWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Rotation angles in degrees (0, 90, 180, 270).
    #[arg(long, value_delimiter = ',', default_value = "0,90,180,270")]
    angles: Vec<String>,
    /// Rotation weights in [0, 1].
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    lambdas: Vec<f32>,
    #[arg(long, default_value_t = 3000)]
    iterations: usize,
    #[arg(long, default_value_t = 412)]
    width: u32,
    #[arg(long, default_value_t = 522)]
    height: u32,
    #[arg(long, default_value_t = 1e4)]
    alpha: f32,
    #[arg(long, default_value_t = 0.01)]
    beta: f32,
    #[arg(long, default_value_t = 0.002)]
    lr: f32,
    #[arg(long, default_value = "content")]
    init: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "both")]
    apply_to: String,
    /// Use average instead of max pooling in the VGG trunk.
    #[arg(long)]
    avg_pool: bool,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn run(args: RunArgs) -> Result<()> {
    let angles = args
        .angles
        .iter()
        .map(|a| a.parse::<Angle>())
        .collect::<Result<Vec<_>>>()?;
    let settings = JobSettings {
        loss_weights: LossWeights {
            alpha: args.alpha,
            beta: args.beta,
        },
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        pool: if args.avg_pool { PoolMode::Avg } else { PoolMode::Max },
        iterations: args.iterations,
        seed: args.seed,
        init: args.init.parse::<InitMode>()?,
        ..JobSettings::default()
    };
    let spec = GridSpec {
        content_path: args.content,
        style_path: args.style,
        angles,
        lambdas: args.lambdas,
        apply_to: args.apply_to.parse::<ApplyTo>()?,
        width: args.width,
        height: args.height,
        parallelism: args.parallelism,
        out_dir: args.out,
        settings,
    };
    let weights = VggWeights::load(&args.weights)?;
    let manifest = pipeline::run_grid(&spec, &weights)?;
    for job in &manifest.jobs {
        println!(
            "{}\tangle={}\tlambda={}\tfinal_loss={}\t{:.1}s",
            job.file, job.angle, job.lambda, job.final_loss, job.wall_time_s
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::SynthWeights { out, seed } => fixture::write_synthetic_weights(&out, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
