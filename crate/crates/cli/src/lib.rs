//! Command-line front end: `coopmber run --config <path> [overrides]`.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coopmber::harness::{
    parse_scheme_list, parse_snr_range, run_sweep, to_csv_string, to_json_string,
};
use coopmber::{Error, ExperimentConfig};

/// Exit code for a failed run.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit code for bad flags or a bad configuration.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "coopmber",
    version,
    about = "Monte Carlo BER sweeps for MBER cooperative relaying"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a BER sweep described by a config file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (flat `key = value` with optional sections).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SNR grid as start:stop:step in dB.
    #[arg(long)]
    snr: Option<String>,
    /// Number of relays.
    #[arg(long)]
    relays: Option<usize>,
    /// Relay code: alamouti or r-alamouti.
    #[arg(long)]
    code: Option<String>,
    /// Comma-separated schemes: epa-mmse, epa-mber, jpa-mber.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(snr) = &args.snr {
        cfg.snr_db = parse_snr_range(snr)?;
    }
    if let Some(relays) = args.relays {
        cfg.relays = relays;
    }
    if let Some(code) = &args.code {
        cfg.code = code.parse()?;
    }
    if let Some(schemes) = &args.scheme {
        cfg.schemes = parse_scheme_list(schemes)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> i32 {
    let cfg = match build_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("coopmber: {e}");
            return EXIT_USAGE;
        }
    };
    let records = match run_sweep(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("coopmber: {e}");
            return EXIT_RUNTIME;
        }
    };
    let text = match args.format {
        Format::Csv => to_csv_string(&records),
        Format::Json => to_json_string(&records),
    };
    let written = match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| e.to_string()),
    };
    match written {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("coopmber: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => match cli.command {
            Command::Run(args) => run(args),
        },
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            code
        }
    }
}
