use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pulsewake_core::app::{self, AppError, EXIT_OK};
use pulsewake_core::config::AppConfig;
use pulsewake_core::net;
use pulsewake_core::pipeline::RunReport;

/// Pulse-gated alarm: hysteresis beat detection driving an alarm that stops
/// only once the heart rate is in the target band.
#[derive(Debug, Parser)]
#[command(name = "pulsewake", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random source, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic waveform as CSV.
    Synth {
        #[arg(long, default_value = "waveform.csv")]
        out: PathBuf,
    },
    /// Run the full pipeline on a waveform or wake scenario.
    Run {
        /// Report destination (line-delimited JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the hysteresis detector with the single-threshold baseline.
    Bench {
        /// CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accept one framed stream over TCP and run the pipeline on it.
    Serve {
        #[arg(long, env = "PULSEWAKE_PORT")]
        port: Option<u16>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stream a waveform CSV to a `serve` instance.
    Send {
        /// Waveform CSV to send.
        file: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PULSEWAKE_PORT")]
        port: Option<u16>,
        /// Playback speed relative to the sample timestamps; 0 sends at once.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Number of frames to send with a broken checksum.
        #[arg(long, default_value_t = 0)]
        corrupt: usize,
    },
}

fn load_config(cli: &Cli) -> Result<AppConfig, AppError> {
    let config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    let config = match cli.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    };
    config.validate()?;
    Ok(config)
}

fn write_report(report: &RunReport, out: Option<&Path>) -> Result<(), AppError> {
    if let Some(path) = out {
        fs::write(path, report.to_jsonl())
            .map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
    }
    print!("{}", report.human_summary());
    Ok(())
}

fn run(cli: Cli) -> Result<i32, AppError> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Synth { out } => {
            let summary = app::cmd_synth(&config, &out)?;
            println!("wrote {}: {}", out.display(), summary.describe());
            Ok(EXIT_OK)
        }
        Command::Run { out } => {
            let report = app::cmd_run(&config)?;
            write_report(&report, out.as_deref().or(config.output.as_deref()))?;
            Ok(app::run_exit_code(&report))
        }
        Command::Bench { out } => {
            let report = app::cmd_bench(&config)?;
            if let Some(path) = &out {
                fs::write(path, report.to_csv())
                    .map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
            }
            print!("{}", report.table());
            Ok(EXIT_OK)
        }
        Command::Serve { port, out } => {
            let port = port.unwrap_or(config.net.port);
            let report = net::cmd_serve(&config, port, |addr| {
                println!("listening on {addr}");
                let _ = std::io::stdout().flush();
            })?;
            write_report(&report, out.as_deref().or(config.output.as_deref()))?;
            Ok(app::run_exit_code(&report))
        }
        Command::Send {
            file,
            host,
            port,
            speed,
            corrupt,
        } => {
            let port = port.unwrap_or(config.net.port);
            let seed = cli.seed.unwrap_or(config.scenario.rng_seed);
            let sent = net::cmd_send(&format!("{host}:{port}"), &file, speed, corrupt, seed)?;
            println!(
                "sent {} frames ({} bytes), {} with broken checksum",
                sent.frames,
                sent.bytes,
                sent.corrupted.len()
            );
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
