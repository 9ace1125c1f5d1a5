use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use apm_core::backtest::RunOptions;
use apm_core::cli::{self, EvalArgs, Overrides};
use apm_core::config::{PeriodPreset, RunConfig};
use apm_core::Result;

/// Continuous artificial prediction market for weekly ILI nowcasting.
#[derive(Parser)]
#[command(name = "apm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (for `synth`, the generator seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Weeks CDC features lag behind the target.
    #[arg(long)]
    lag: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Calendar,
    FluSeasons,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and align raw GFT/CDC files into the canonical dataset.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Run the weekly market backtest.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop and checkpoint once this many weeks have been traded.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Compare two prediction streams against the truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Stream a (default: the run's market predictions).
        #[arg(long)]
        a: Option<PathBuf>,
        /// Stream b (default: the configured baseline agent).
        #[arg(long)]
        b: Option<PathBuf>,
        /// Ground truth (default: truth.csv in the output directory).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Reporting periods.
        #[arg(long, value_enum)]
        periods: Option<Preset>,
    },
    /// Generate a synthetic dataset from the [synth] section.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml("")?,
    };
    Overrides {
        seed: common.seed,
        out: common.out.clone(),
        lag: common.lag,
    }
    .apply(&mut cfg);
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Ingest { common } => cli::cmd_ingest(&load(&common)?),
        Command::Run {
            common,
            resume,
            stop_after,
        } => cli::cmd_run(&load(&common)?, RunOptions { resume, stop_after }),
        Command::Eval {
            common,
            a,
            b,
            truth,
            periods,
        } => {
            let cfg = load(&common)?;
            let args = EvalArgs {
                a,
                b,
                truth,
                preset: periods.map(|p| match p {
                    Preset::Calendar => PeriodPreset::Calendar,
                    Preset::FluSeasons => PeriodPreset::FluSeasons,
                }),
            };
            cli::cmd_eval(&cfg, &args).map(|r| cli::format_report(&r))
        }
        Command::Synth { common } => {
            let mut cfg = load(&common)?;
            if let (Some(seed), Some(spec)) = (common.seed, cfg.synth.as_mut()) {
                spec.seed = seed;
            }
            cli::cmd_synth(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("APM_LOG", "warn")).init();
    let args = Cli::parse();
    match dispatch(args.command) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
