use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use trajmend::masking::MaskMode;
use trajmend::pipeline::{Overrides, Pipeline, PipelineError};

/// Generate tasks, synthesize teacher-corrected trajectories, build masked
/// training files and evaluate policies.
#[derive(Debug, Parser)]
#[command(name = "trajmend", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for all artifacts; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Loss mode for the reflection set when building training files.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,

    /// Prepend a worked example to remote policy prompts.
    #[arg(long, global = true)]
    one_shot: bool,

    /// Episodes run concurrently.
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// Replace every seed in the config with this value.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate instructions and golden trajectories.
    Gen,
    /// Split the corpus and synthesize reflection trajectories.
    Synth,
    /// Write the training JSONL.
    Mask,
    /// Evaluate a policy on a held-out generated set.
    Eval,
    /// Run gen, synth, mask and eval in order.
    Run,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    PartialMask,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("trajmend: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<String, PipelineError> {
    let config = cli
        .config
        .as_ref()
        .ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let overrides = Overrides {
        out: cli.out.clone(),
        mode: cli.mode.map(|m| match m {
            Mode::Full => MaskMode::Full,
            Mode::PartialMask => MaskMode::PartialMask,
        }),
        one_shot: cli.one_shot,
        parallelism: cli.parallelism,
        seed: cli.seed_override,
    };
    let p = Pipeline::from_file(config, &overrides)?;
    match cli.command {
        Command::Gen => p.gen(),
        Command::Synth => p.synth(),
        Command::Mask => p.mask(),
        Command::Eval => p.eval(),
        Command::Run => p.run_all(),
    }
}
