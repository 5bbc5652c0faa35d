//! Command-line front end: runs scenarios or parameter sweeps, renders
//! summaries, and writes CSV / JSON / trace artifacts.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rfidsim::adversary;
use rfidsim::config::parse_config;
use rfidsim::metrics::{self, SweepAxis};
use rfidsim::simcore::{self, RunOptions};
use rfidsim::traffic::TrafficClass;

#[derive(Parser)]
#[command(
    name = "rfidsim",
    version,
    about = "Discrete-event simulator for RFID mutual authentication of \
             vehicle-mounted tags"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, or a parameter sweep over it, and report metrics.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scenario file; an empty file runs the stock medium-traffic
    /// scenario.
    config: PathBuf,

    /// Sweep one axis: `delay=0,5,10` (ms), `bandwidth=128000,1000000`
    /// (bits/s), `traffic=light,medium,heavy`, or `seed=1,2,3`.
    /// Repeatable; later axes vary fastest.
    #[arg(long, value_name = "AXIS=V,V,..")]
    sweep: Vec<String>,

    /// Write the report table as CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,

    /// Write the full reports as JSON.
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,

    /// Override the scenario's seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Also run the attack harnesses at the scenario's seed and attach
    /// their verdicts to the report.
    #[arg(long)]
    attacks: bool,

    /// Write the engine event trace as JSON lines (single runs only).
    #[arg(long, value_name = "PATH", conflicts_with = "sweep")]
    trace: Option<PathBuf>,

    /// After simulating, run the headline reproduction checks (takes about
    /// a minute) and exit with status 2 if any band is missed.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    // Usage errors share exit status 1 with scenario errors; status 2 is
    // reserved for a simulation that misses a `--check` band.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match cli.command {
        Command::Simulate(args) => simulate(args),
    }
}

/// Exit with status 1: the scenario or invocation is unusable.
fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn simulate(args: SimulateArgs) -> ExitCode {
    let text = match fs::read_to_string(&args.config) {
        Ok(text) => text,
        Err(e) => return config_error(format_args!("cannot read {}: {e}", args.config.display())),
    };
    let mut scenario = match parse_config(&text) {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let axes = match args.sweep.iter().map(|s| parse_axis(s)).collect() {
        Ok(axes) => axes,
        Err(e) => return config_error(e),
    };
    let axes: Vec<SweepAxis> = axes;

    let mut reports = if axes.is_empty() {
        let opts = RunOptions {
            capture_trace: args.trace.is_some(),
            capture_transcripts: false,
        };
        let output = simcore::run_full(&scenario, opts);
        if let Some(path) = &args.trace {
            let mut lines = String::with_capacity(64 * output.trace.len());
            for event in &output.trace {
                lines.push_str(&serde_json::to_string(event).expect("trace event serializes"));
                lines.push('\n');
            }
            if let Err(e) = fs::write(path, lines) {
                return config_error(format_args!("cannot write {}: {e}", path.display()));
            }
        }
        vec![output.report]
    } else {
        metrics::run_sweep(&scenario, &axes)
    };

    if args.attacks {
        reports[0].attack_verdicts = Some(adversary::run_all(scenario.seed));
    }

    for (i, report) in reports.iter().enumerate() {
        if i > 0 {
            println!();
        }
        print!("{}", metrics::summarize(report));
    }

    if let Some(path) = &args.csv {
        if let Err(e) = fs::write(path, metrics::emit_csv(&reports)) {
            return config_error(format_args!("cannot write {}: {e}", path.display()));
        }
    }
    if let Some(path) = &args.json {
        let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        if let Err(e) = fs::write(path, json) {
            return config_error(format_args!("cannot write {}: {e}", path.display()));
        }
    }

    if args.check {
        println!();
        let checks = metrics::reproduction_checks();
        for line in &checks {
            println!("{}", line.render());
        }
        if checks.iter().any(|c| !c.passed) {
            return ExitCode::from(2);
        }
    }
    ExitCode::SUCCESS
}

/// Parses one `--sweep` argument of the form `axis=v1,v2,…`.
fn parse_axis(arg: &str) -> Result<SweepAxis, String> {
    let (key, values) = arg
        .split_once('=')
        .ok_or_else(|| format!("sweep axis '{arg}' must look like axis=v1,v2,…"))?;
    let items: Vec<&str> = values.split(',').filter(|v| !v.is_empty()).collect();
    if items.is_empty() {
        return Err(format!("sweep axis '{key}' lists no values"));
    }
    match key {
        "delay" => Ok(SweepAxis::ServerDelayMs(parse_values(key, &items)?)),
        "bandwidth" => Ok(SweepAxis::BandwidthBps(parse_values(key, &items)?)),
        "seed" => Ok(SweepAxis::Seed(parse_values(key, &items)?)),
        "traffic" => {
            let classes = items
                .iter()
                .map(|v| match *v {
                    "light" => Ok(TrafficClass::Light),
                    "medium" => Ok(TrafficClass::Medium),
                    "heavy" => Ok(TrafficClass::Heavy),
                    other => Err(format!(
                        "unknown traffic class '{other}' (expected light, medium, or heavy)"
                    )),
                })
                .collect::<Result<_, _>>()?;
            Ok(SweepAxis::Traffic(classes))
        }
        other => Err(format!(
            "unknown sweep axis '{other}' (expected delay, bandwidth, traffic, or seed)"
        )),
    }
}

fn parse_values<T: std::str::FromStr>(key: &str, items: &[&str]) -> Result<Vec<T>, String> {
    items
        .iter()
        .map(|v| {
            v.parse()
                .map_err(|_| format!("sweep axis '{key}': cannot parse value '{v}'"))
        })
        .collect()
}
