use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use jetstack_gcs::log::{export_csv, FlightLogReader, FlightLogWriter, LogHeader};
use jetstack_gcs::server::{ServeOptions, TelemetryServer};
use jetstack_gcs::{run_scenario, Runtime, Scenario};

#[derive(Parser)]
#[command(name = "jetstack", version, about = "Simulated flight stack for a jet-powered humanoid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless and print the exit report as JSON.
    Run {
        config: PathBuf,
        /// Flight log path [default: <config stem>.ndjson]
        #[arg(long)]
        log: Option<PathBuf>,
        /// Skip writing the flight log.
        #[arg(long, conflicts_with = "log")]
        no_log: bool,
        /// Override a config key, e.g. `--set schedule.ramp_rate=0.05`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the telemetry frames of a flight log as NDJSON.
    Replay {
        log: PathBuf,
        /// Print every n-th frame.
        #[arg(long, default_value_t = 1)]
        every: u64,
    },
    /// Run a scenario while streaming telemetry over TCP and accepting commands.
    Serve {
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        /// Simulated seconds per wall second; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        realtime: f64,
        /// Wait for this many clients before starting.
        #[arg(long, default_value_t = 0)]
        wait_clients: usize,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Convert a flight log to CSV.
    Export {
        log: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn default_log(config: &Path) -> PathBuf {
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("flight");
    PathBuf::from(format!("{stem}.ndjson"))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, log, no_log, overrides } => {
            let scenario = Scenario::load(&config, &overrides)?;
            let log = (!no_log).then(|| log.unwrap_or_else(|| default_log(&config)));
            let out = run_scenario(scenario, log.as_deref())?;
            if let Some(e) = &out.log_error {
                eprintln!("warning: logging stopped early: {e}");
            }
            println!("{}", serde_json::to_string_pretty(&out.report)?);
        }
        Command::Replay { log, every } => {
            let reader = FlightLogReader::open(&log).with_context(|| format!("{}", log.display()))?;
            let stdout = std::io::stdout();
            let mut out = std::io::BufWriter::new(stdout.lock());
            for frame in reader {
                let frame = frame.with_context(|| format!("{}", log.display()))?;
                if frame.tick % every.max(1) == 0 {
                    serde_json::to_writer(&mut out, &frame)?;
                    out.write_all(b"\n")?;
                }
            }
            out.flush()?;
        }
        Command::Serve { config, bind, realtime, wait_clients, log, overrides } => {
            let scenario = Scenario::load(&config, &overrides)?;
            let header = LogHeader::new(&scenario.config);
            let options = ServeOptions {
                decimation: scenario.config.telemetry.decimation,
                realtime_factor: realtime,
                wait_for_clients: wait_clients,
                wait_timeout: Duration::from_secs(3600),
                ..ServeOptions::default()
            };
            let mut runtime = Runtime::new(scenario)?;
            let server = TelemetryServer::bind(&bind, options).with_context(|| format!("cannot bind {bind}"))?;
            eprintln!("serving telemetry on {}", server.local_addr());
            let mut writer = match &log {
                Some(p) => Some(FlightLogWriter::create(p, &header).with_context(|| format!("{}", p.display()))?),
                None => None,
            };
            let report = server.run(&mut runtime, writer.as_mut());
            server.shutdown();
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Export { log, csv } => {
            let rows = export_csv(&log, &csv).with_context(|| format!("{}", log.display()))?;
            eprintln!("wrote {rows} rows to {}", csv.display());
        }
    }
    Ok(())
}
