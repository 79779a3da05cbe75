mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;

/// Seed used when neither --seed nor --random-seed is given.
pub const DEFAULT_SEED: u64 = 1;

/// Pull-based load balancing: n-server simulation, fluid limit and
/// experiment sweeps.
#[derive(Debug, Parser)]
#[command(name = "rcpb", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config with [system], [regime], [fluid] and [experiment] sections.
    /// Keys may be overridden by RCPB_<SECTION>_<KEY> environment variables.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base seed; replication k uses seed + k.
    #[arg(long, global = true, value_name = "U64", default_value_t = DEFAULT_SEED, conflicts_with = "random_seed")]
    pub seed: u64,
    /// Draw the base seed from OS entropy (it is printed and recorded).
    #[arg(long, global = true)]
    pub random_seed: bool,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub output: PathBuf,
    /// Maximum concurrent replications (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady-state simulation: delay with CI, message rate, token histogram.
    Simulate {
        /// Overrides experiment.horizon.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Integrate the fluid model and report its equilibrium.
    Fluid {
        /// Overrides fluid.horizon.
        #[arg(long)]
        horizon: Option<f64>,
        /// Print and record the equilibrium without integrating.
        #[arg(long)]
        equilibrium_only: bool,
    },
    /// Parameter sweep over the experiment axes, or a built-in study.
    Sweep {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Overrides experiment.horizon.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Simulation against the fluid model: steady-state delay and the
    /// trajectory gap sup_t ||S^n(t) - s(t)||_w. Needs a [fluid] section.
    Compare {
        /// Overrides experiment.horizon.
        #[arg(long)]
        horizon: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Delay vs load for RCPB, power-of-2 and PULL.
    Figure4,
    /// Trajectory gap vs n.
    Convergence,
    /// Long-run occupancy vs the fluid equilibrium.
    Interchange,
    /// High Message fluid path through the boundary.
    Figure3,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Figure4 => "figure4",
            Preset::Convergence => "convergence",
            Preset::Interchange => "interchange",
            Preset::Figure3 => "figure3",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        <Preset as ValueEnum>::from_str(s, false)
            .map_err(|_| anyhow::anyhow!("experiment.preset: unknown preset {s:?}"))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            anyhow::bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let config = Config::load(cli.global.config.as_deref())?;
    let seed = if cli.global.random_seed {
        let s = rand::random::<u64>();
        println!("seed={s}");
        s
    } else {
        cli.global.seed
    };
    let ctx = commands::Context {
        config,
        seed,
        output: cli.global.output,
    };
    match cli.command {
        Command::Simulate { horizon } => commands::simulate(&ctx, horizon),
        Command::Fluid { horizon, equilibrium_only } => commands::fluid(&ctx, horizon, equilibrium_only),
        Command::Sweep { preset, horizon } => {
            let preset = match (preset, ctx.config.experiment().preset) {
                (Some(p), _) => Some(p),
                (None, Some(s)) => Some(Preset::parse(&s)?),
                (None, None) => None,
            };
            commands::sweep(&ctx, preset, horizon)
        }
        Command::Compare { horizon } => commands::compare(&ctx, horizon),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
