use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fimcrb_cli::config::derived_report;
use fimcrb_cli::{run_experiment, write_outputs, CliError, ExperimentConfig, Preset, RunOptions};
use fimcrb_core::ao::Mode;

#[derive(Parser)]
#[command(name = "fimcrb", version, about = "Average-CRB optimization sweeps for FIM-assisted ISAC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write CSV results.
    Run {
        /// JSON experiment file (optional when --preset is given).
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Comma-separated subset of RA, RXonly, TXonly, Joint.
        #[arg(long, value_delimiter = ',')]
        mode: Option<Vec<Mode>>,
        /// Override the number of channel draws.
        #[arg(long)]
        draws: Option<usize>,
        /// Write runtime_s as 0 so repeated runs are byte-identical.
        #[arg(long)]
        no_timing: bool,
    },
    /// Check a configuration and print derived quantities.
    ValidateConfig {
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
    },
}

fn load(config: Option<PathBuf>, preset: Option<Preset>) -> Result<ExperimentConfig, CliError> {
    match (config, preset) {
        (Some(path), None) => ExperimentConfig::load(&path),
        (None, Some(p)) => Ok(p.config()),
        (Some(_), Some(_)) => Err(CliError::config("preset", "give either a config file or --preset, not both")),
        (None, None) => Err(CliError::config("config", "a config file or --preset is required")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            preset,
            seed,
            out,
            workers,
            mode,
            draws,
            no_timing,
        } => load(config, preset).and_then(|mut cfg| {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(m) = mode {
                cfg.modes = m;
            }
            if let Some(d) = draws {
                cfg.n_channel_draws = d;
            }
            let opts = RunOptions {
                workers,
                timing: !no_timing,
            };
            let res = run_experiment(&cfg, &opts)?;
            write_outputs(&res, &cfg.out)?;
            println!("wrote {} rows to {}", res.rows.len(), cfg.out.display());
            Ok(())
        }),
        Command::ValidateConfig { config, preset } => load(config, preset).and_then(|cfg| {
            cfg.validate()?;
            print!("{}", derived_report(&cfg)?);
            println!("ok");
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
