mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{LoadOptions, PipelineConfig};
use error::{CliError, EXIT_CONFIG};

/// Options accepted both before and after the subcommand.
#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `experiment.train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// Later options win; overrides accumulate in command-line order.
    fn merge(&self, later: &Common) -> Common {
        Common {
            config: later.config.clone().or_else(|| self.config.clone()),
            seed: later.seed.or(self.seed),
            out: later.out.clone().or_else(|| self.out.clone()),
            overrides: self.overrides.iter().chain(&later.overrides).cloned().collect(),
        }
    }
}

/// Pseudo caption labeling experiments on a synthetic concept world.
#[derive(Debug, Parser)]
#[command(name = "pcl", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the concept world, train/test datasets and region proposals.
    GenWorld(Plain),
    /// Caption base-class training objects and assemble label sets.
    GenLabels(Plain),
    /// Train the detection head.
    Train(Plain),
    /// Evaluate the trained head and write the AP report.
    Eval(Plain),
    /// Top-1 proposal for a free-text query.
    Query(QueryArgs),
    /// Run the ablation matrix and print the comparison table.
    Ablate(Plain),
}

#[derive(Debug, Args)]
struct Plain {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Free-text description of the object to find.
    text: String,
    /// Restrict to proposals of one evaluation scene.
    #[arg(long)]
    scene: Option<String>,
    #[command(flatten)]
    common: Common,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenWorld(p)
            | Command::GenLabels(p)
            | Command::Train(p)
            | Command::Eval(p)
            | Command::Ablate(p) => &p.common,
            Command::Query(q) => &q.common,
        }
    }
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let opts = cli.common.merge(cli.command.common());
    let cfg = PipelineConfig::load(&LoadOptions {
        config: opts.config.as_deref(),
        overrides: &opts.overrides,
        seed: opts.seed,
        out: opts.out.as_deref(),
    })?;
    match &cli.command {
        Command::GenWorld(_) => commands::gen_world(&cfg),
        Command::GenLabels(_) => commands::gen_labels(&cfg),
        Command::Train(_) => commands::train_cmd(&cfg),
        Command::Eval(_) => commands::eval_cmd(&cfg),
        Command::Query(q) => commands::query_cmd(&cfg, &q.text, q.scene.as_deref()),
        Command::Ablate(_) => commands::ablate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
