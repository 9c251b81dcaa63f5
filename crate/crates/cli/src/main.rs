use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use genrec::pipeline::{ModelArm, Pipeline, PipelineConfig, RlArm, SftArm, Stage};
use genrec::sft::SftMode;
use genrec::GenRecError;

#[derive(Parser)]
#[command(name = "genrec", about = "Generative retrieval recommendation pipeline")]
struct Cli {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set sft.total_steps=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pagewise,
    Pointwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct DecodeArgs {
    /// Model arm, e.g. `sft-pagewise` or `grpo-sr`.
    #[arg(long)]
    model: String,
    #[arg(long)]
    constrained: Option<bool>,
    #[arg(long)]
    beam_width: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate catalog, users, sessions and the user split.
    GenData,
    /// Fit the residual k-means codebook on item embeddings.
    FitTokenizer,
    /// Assign semantic IDs and write training and held-out examples.
    Tokenize,
    TrainSft {
        #[arg(long, value_enum, default_value = "pagewise")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "on")]
        merger: Switch,
    },
    TrainRl {
        /// grpo-sr, grpo, grpo-sr-nogate or grpo-nogate.
        #[arg(long, default_value = "grpo-sr")]
        arm: String,
        /// SFT arm to start from.
        #[arg(long)]
        from: Option<String>,
    },
    Decode(DecodeArgs),
    /// Score a decode file. Takes the same decode flags so the stage hashes line up.
    Eval(DecodeArgs),
    /// Comparison table across the configured arms.
    Report,
    /// Every stage for the configured arms.
    All,
}

fn resolve(cli: &Cli) -> genrec::Result<PipelineConfig> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut overrides = cli.overrides.clone();
    match &cli.command {
        Command::TrainRl { from: Some(f), .. } => overrides.push(format!("arms.rl_from={f}")),
        Command::Decode(d) | Command::Eval(d) => {
            if let Some(c) = d.constrained {
                overrides.push(format!("eval.constrained={c}"));
            }
            if let Some(b) = d.beam_width {
                overrides.push(format!("eval.beam_width={b}"));
            }
        }
        _ => {}
    }
    let mut cfg = base.with_overrides(&overrides)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> genrec::Result<()> {
    let pipeline = Pipeline::new(resolve(cli)?)?;
    let stage = match &cli.command {
        Command::All => return pipeline.run_all(),
        Command::GenData => Stage::GenData,
        Command::FitTokenizer => Stage::FitTokenizer,
        Command::Tokenize => Stage::Tokenize,
        Command::TrainSft { mode, merger } => Stage::TrainSft(SftArm {
            mode: match mode {
                Mode::Pagewise => SftMode::Pagewise,
                Mode::Pointwise => SftMode::Pointwise,
            },
            merger: matches!(merger, Switch::On),
        }),
        Command::TrainRl { arm, .. } => Stage::TrainRl(arm.parse::<RlArm>()?),
        Command::Decode(d) => Stage::Decode(d.model.parse::<ModelArm>()?),
        Command::Eval(d) => Stage::Eval(d.model.parse::<ModelArm>()?),
        Command::Report => Stage::Report,
    };
    pipeline.run(stage)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                GenRecError::MissingArtifact { .. } => 3,
                GenRecError::StalePipeline(_) => 4,
                _ => 1,
            })
        }
    }
}
