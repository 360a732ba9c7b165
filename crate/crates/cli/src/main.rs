//! `blocklev`: block leverage score sketching experiments.
//!
//! Every subcommand reads one experiment configuration, either from flags or
//! from `--config FILE`, and writes its outputs plus a `config.json`
//! snapshot to the output directory. Exit status is 0 when all checks made
//! by the command pass, 1 when one fails and 2 on bad usage or input.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands::{Status, Suite};
use crate::config::{ExperimentConfig, InstanceConfig, InstanceSource, NetworkConfig, PolicyArg, SketchKind};

#[derive(Parser)]
#[command(
    name = "blocklev",
    version,
    about = "Block leverage score sketching over simulated straggling servers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Block leverage scores of the data and summary statistics.
    Scores(ConfigArgs),
    /// Replication plan for the network, one column per deadline.
    Design {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Use the scores in this scores.json instead of the configured data.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Comma separated deadlines; defaults to the network deadline.
        #[arg(long, value_delimiter = ',')]
        deadlines: Vec<f64>,
    },
    /// One sketched descent run, written to run.csv.
    Solve(ConfigArgs),
    /// Mean final residuals of several sketches over trials.
    Compare(ConfigArgs),
    /// Checks of the sketching and network identities.
    Verify {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config. When given, all other configuration flags
    /// except --out are ignored.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Rows of the synthetic instance.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Columns of the synthetic instance.
    #[arg(long, default_value_t = 40)]
    d: usize,
    /// Number of row blocks K.
    #[arg(long, short = 'k', default_value_t = 100)]
    blocks: usize,
    /// Degrees of freedom of the Student-t entries.
    #[arg(long, default_value_t = 1.0)]
    dof: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    /// Standard deviation of the planted solution's entries.
    #[arg(long, default_value_t = 8.0)]
    signal_scale: f64,
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
    /// Read A from this CSV instead of generating it.
    #[arg(long)]
    a_csv: Option<PathBuf>,
    /// Right-hand side CSV, one value per line. Defaults to zero.
    #[arg(long, requires = "a_csv")]
    b_csv: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = SketchKind::BlockLvg)]
    sketch: SketchKind,
    /// Sketch size in blocks; also the number of fastest responses kept.
    #[arg(long, short = 'q', default_value_t = 50)]
    q: usize,

    /// Simulate an expansion network over this many servers.
    #[arg(long, short = 'm')]
    servers: Option<usize>,
    /// Ending time; responses arriving later are dropped.
    #[arg(long, requires = "servers")]
    deadline: Option<f64>,
    /// shifted-exp:RATE,SHIFT or trace:PATH.
    #[arg(long, default_value = "shifted-exp:1,0.5")]
    runtime: String,

    /// fixed:XI, conservative:SCALE, optimal or diminishing:ETA.
    #[arg(long, default_value = "optimal")]
    policy: PolicyArg,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 6)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measure gradient errors against their bound at every iteration.
    #[arg(long)]
    track_bound: bool,
    /// Sketches crossed by compare; defaults to all four.
    #[arg(long, value_enum, value_delimiter = ',')]
    sketches: Vec<SketchKind>,
    /// Step policies crossed by compare; defaults to --policy.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<PolicyArg>,

    /// Output directory [default: out, or the config's].
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut cfg = match self.config {
            Some(path) => ExperimentConfig::load(&path)?,
            None => {
                let source = match self.a_csv {
                    Some(a) => InstanceSource::Csv { a, b: self.b_csv },
                    None => InstanceSource::Synthetic {
                        n: self.n,
                        d: self.d,
                        dof: self.dof,
                        noise_sigma: self.noise_sigma,
                        signal_scale: self.signal_scale,
                        seed: self.instance_seed,
                    },
                };
                ExperimentConfig {
                    instance: InstanceConfig {
                        blocks: self.blocks,
                        source,
                    },
                    sketch: self.sketch,
                    q: self.q,
                    network: self.servers.map(|servers| NetworkConfig {
                        servers,
                        deadline: self.deadline,
                        runtime: self.runtime,
                    }),
                    policy: self.policy.0,
                    iterations: self.iterations,
                    trials: self.trials,
                    seed: self.seed,
                    track_bound: self.track_bound,
                    compare_sketches: if self.sketches.is_empty() {
                        SketchKind::ALL.to_vec()
                    } else {
                        self.sketches
                    },
                    compare_policies: self.policies.into_iter().map(|p| p.0).collect(),
                    output_dir: PathBuf::from("out"),
                }
            }
        };
        if let Some(out) = self.out {
            cfg.output_dir = out;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Scores(args) => commands::scores(&args.resolve()?),
        Command::Design { cfg, scores, deadlines } => commands::design(&cfg.resolve()?, scores.as_ref(), &deadlines),
        Command::Solve(args) => commands::solve_cmd(&args.resolve()?),
        Command::Compare(args) => commands::compare(&args.resolve()?),
        Command::Verify { cfg, suite } => commands::verify(&cfg.resolve()?, suite),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on its own for malformed arguments
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail) => {
            eprintln!("check failed; see the reports in the output directory");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
