//! Thin CLI over the pipeline library: parse flags, run one command, map
//! errors to exit codes (2 config, 3 io, 4 numeric, 5 degenerate input).

use clap::{Parser, Subcommand};
use disrank::pipeline::{
    cmd_bench, cmd_cpt, cmd_distill, cmd_eval, cmd_gen_data, cmd_score, cmd_score_dist, cmd_sft,
    load_config, LossMode, Overrides, PipelineError, RunConfig,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "disrank", about = "Train, distill, and evaluate tiny ranking models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the four synthetic data splits.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train the decoder teacher on unlabeled pairs.
    Cpt {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune the teacher as a pairwise ranker.
    Sft {
        #[command(flatten)]
        common: Common,
    },
    /// Score the distillation split with the teacher.
    Score {
        #[command(flatten)]
        common: Common,
    },
    /// Distill teacher scores into the encoder student.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Distillation loss: point, margin, or hybrid.
        #[arg(long)]
        loss: Option<LossMode>,
    },
    /// Rank the test split and report PNR and nDCG.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Compare teacher and student forward latency.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Histogram a model's scores over the distillation split.
    ScoreDist {
        #[command(flatten)]
        common: Common,
    },
}

fn prepare(common: &Common, loss: Option<LossMode>) -> Result<RunConfig, PipelineError> {
    let mut config = load_config(&common.config)?;
    let overrides = Overrides { seed: common.seed, out: common.out.clone(), loss };
    overrides.apply(&mut config);
    Ok(config)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::GenData { common } => cmd_gen_data(&prepare(&common, None)?).map(drop),
        Command::Cpt { common } => cmd_cpt(&prepare(&common, None)?).map(drop),
        Command::Sft { common } => cmd_sft(&prepare(&common, None)?).map(drop),
        Command::Score { common } => cmd_score(&prepare(&common, None)?).map(drop),
        Command::Distill { common, loss } => cmd_distill(&prepare(&common, loss)?).map(drop),
        Command::Eval { common } => cmd_eval(&prepare(&common, None)?).map(drop),
        Command::Bench { common } => cmd_bench(&prepare(&common, None)?).map(drop),
        Command::ScoreDist { common } => cmd_score_dist(&prepare(&common, None)?).map(drop),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
