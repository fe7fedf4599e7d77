use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ftspe_cli::commands::{self, Overrides};
use ftspe_cli::config::Preset;
use ftspe_cli::CliError;

/// Finite-time stable pose estimation: simulation, comparison and replay.
#[derive(Parser, Debug)]
#[command(name = "ftspe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the selected estimators on a simulated scenario and report errors.
    Simulate(Common),
    /// Compare two or more estimators on shared measurement streams.
    Compare(Common),
    /// Run the FTS observer over a recorded replay CSV.
    Replay {
        /// Replay file with columns t,gx,gy,gz,p1x,p1y,p1z,...
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check the observer gains against the configured noise bounds.
    ValidateGains(Common),
    /// Write the truth trajectory and a replay file for the first seed.
    Export(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Built-in scenario: paper-7.1-noisefree, paper-7.1-noisy, paper-7.2, paper-7.3-like.
    #[arg(long, value_parser = |s: &str| s.parse::<Preset>())]
    preset: Option<Preset>,
    /// Config file; its values override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed count N (seeds 1..=N), range a..b, or list a,b,c.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of fts,vpe,dqmekf.
    #[arg(long)]
    estimators: Option<String>,
    /// Write SVG plots of the error series.
    #[arg(long, overrides_with = "no_plot")]
    plot: bool,
    #[arg(long, overrides_with = "plot")]
    no_plot: bool,
    /// Overrides the config seeds with a single seed.
    #[arg(long = "seed-env", env = "FTSPE_SEED", hide = true)]
    env_seed: Option<String>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            estimators: self.estimators.clone(),
            plot: match (self.plot, self.no_plot) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
            env_seed: self.env_seed.clone(),
        }
    }
}

fn run(cli: Cli) -> Result<commands::Outcome, CliError> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&commands::load_config(&c.overrides())?),
        Command::Compare(c) => commands::compare(&commands::load_config(&c.overrides())?),
        Command::ValidateGains(c) => commands::validate_gains(&commands::load_config(&c.overrides())?),
        Command::Export(c) => commands::export(&commands::load_config(&c.overrides())?),
        Command::Replay { file, common } => {
            let mut o = common.overrides();
            if o.preset.is_none() && o.config.is_none() {
                o.preset = Some(Preset::Paper73Like);
            }
            commands::replay(&file, &commands::load_config(&o)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            ExitCode::from(outcome.exit as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
