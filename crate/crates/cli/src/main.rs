use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pathwise_spt_cli::backtest::run_backtest;
use pathwise_spt_cli::config::{read_config_file, Overrides};
use pathwise_spt_cli::report::{emit_report, write_prices_csv};
use pathwise_spt_cli::{CliError, EXIT_DIAGNOSTICS, EXIT_PASS, EXIT_USAGE};

/// Pathwise portfolio backtests: master-formula ledgers and diagnostics
/// along refining partitions.
#[derive(Parser)]
#[command(name = "pspt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a backtest and emit ledgers, weights, diagnostics, and a summary.
    Run {
        /// Key-value configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Restrict the sweep to one hierarchy level.
        #[arg(long)]
        level: Option<usize>,
        /// Output directory (overrides config and the PSPT_OUT variable).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override for synthetic sources.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic price CSV from a spec file.
    Simulate {
        /// Key-value synthetic spec file.
        #[arg(long)]
        spec: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the diagnostics only and report pass/fail, without emitting files.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run { config, level, out, seed } => {
            let overrides = Overrides { level, out_dir: out, seed };
            let cfg = read_config_file(&config, &overrides)?;
            let bundle = run_backtest(&cfg)?;
            let written = emit_report(&bundle, &cfg.out_dir)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            for failure in &bundle.hard_failures {
                eprintln!("diagnostic failure: {failure}");
            }
            Ok(if bundle.passed() { EXIT_PASS } else { EXIT_DIAGNOSTICS })
        }
        Command::Simulate { spec, out, seed } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| CliError::Io(format!("cannot read spec {}: {e}", spec.display())))?;
            let spec = pathwise_spt_cli::config::parse_synthetic_spec(&text, seed)?;
            let path = pathwise_spt::synthetic::simulate_paths(&spec)?;
            let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
            write_prices_csv(&path, None, start, &out)?;
            println!("wrote {}", out.display());
            Ok(EXIT_PASS)
        }
        Command::Check { config, seed } => {
            let overrides = Overrides { seed, ..Overrides::default() };
            let cfg = read_config_file(&config, &overrides)?;
            let bundle = run_backtest(&cfg)?;
            for level in &bundle.levels {
                println!(
                    "level {} ({} points): state residual(T) = {:e}, functional residual(T) = {:e}",
                    level.level,
                    level.points,
                    level.state_ledger.terminal_residual(),
                    level.functional_ledger.terminal_residual(),
                );
            }
            for failure in &bundle.hard_failures {
                eprintln!("diagnostic failure: {failure}");
            }
            println!("status = {}", if bundle.passed() { "pass" } else { "fail" });
            Ok(if bundle.passed() { EXIT_PASS } else { EXIT_DIAGNOSTICS })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
