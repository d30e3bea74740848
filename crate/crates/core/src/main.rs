//! Command-line front end: run scenario batches, list the built-in
//! scenarios, validate configuration files.
//!
//! Exit codes: 0 success, 2 configuration error (including CLI usage),
//! 3 i/o error, 4 internal invariant breach.

use clap::{Parser, Subcommand, ValueEnum};
use ddt_lab::harness::{self, HarnessError, RunSummary};
use ddt_lab::netsim::NetsimError;
use ddt_lab::scenario::{ConfigError, Scenario};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const EXIT_CONFIG: i32 = 2;
const EXIT_IO: i32 = 3;
const EXIT_INTERNAL: i32 = 4;

#[derive(Parser)]
#[command(
    name = "ddt-lab",
    version,
    about = "Deterministic laboratory for three-pass commuting-lock key exchanges"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario batch and print its summary.
    Run {
        /// Path to a scenario file, or the name of a built-in one.
        #[arg(long)]
        scenario: String,
        /// Seeded runs; run i uses seed base+i.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Base seed override; defaults to the scenario's own.
        #[arg(long)]
        seed: Option<u64>,
        /// Write every run's trace here, JSON Lines, concatenated.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the JSON summary here as well as stdout.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// List the built-in scenarios.
    Scenarios,
    /// Parse and validate a scenario, printing its config digest.
    Validate {
        /// Path to a scenario file, or the name of a built-in one.
        #[arg(long)]
        scenario: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Failure {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Failure {
        let code = match &e {
            HarnessError::Sim(NetsimError::Config(_)) => EXIT_CONFIG,
            _ => EXIT_INTERNAL,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(context: &str, e: std::io::Error) -> Failure {
    Failure { code: EXIT_IO, message: format!("i/o error: {context}: {e}") }
}

/// A real file wins; otherwise the argument may name a built-in.
fn load_scenario(arg: &str) -> Result<Scenario, Failure> {
    let text = if Path::new(arg).exists() {
        std::fs::read_to_string(arg).map_err(|e| io_failure(arg, e))?
    } else if let Some((_, text)) =
        harness::reference_scenarios().into_iter().find(|(name, _)| *name == arg)
    {
        text.to_string()
    } else {
        return Err(Failure {
            code: EXIT_IO,
            message: format!("i/o error: {arg}: no such file or built-in scenario"),
        });
    };
    Scenario::from_json(&text).map_err(Failure::from)
}

fn text_summary(s: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {}", s.scenario_digest);
    let _ = writeln!(
        out,
        "runs {} (base seed {}): {} completed, {} aborted",
        s.runs, s.base_seed, s.completions, s.aborts
    );
    if !s.aborts_by_reason.is_empty() {
        let reasons: Vec<String> =
            s.aborts_by_reason.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "abort reasons: {}", reasons.join(", "));
    }
    for (rule, stat) in &s.detection {
        let _ = writeln!(
            out,
            "detection {rule}: {}/{} flagged ({:.3})",
            stat.flagged, stat.evaluated, stat.rate
        );
    }
    if let Some(r) = s.recovered_equals_sent_rate {
        let _ = writeln!(out, "recovered == sent: {r:.3}");
    }
    if let Some(r) = s.digest_mismatch_rate {
        let _ = writeln!(out, "digest mismatches: {r:.3}");
    }
    let _ = writeln!(out, "eve recovery: {:.3}", s.eve_recovery_rate);
    if let Some(r) = s.fake_delivery_rate {
        let _ = writeln!(out, "fake delivery: {r:.3}");
    }
    out
}

fn run_command(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { scenario, runs, seed, trace, summary, format } => {
            let sc = load_scenario(&scenario)?;
            let (run_summary, results) = harness::run_batch(&sc, runs, seed)?;
            if let Some(path) = trace {
                std::fs::write(&path, harness::emit_traces(&results))
                    .map_err(|e| io_failure(&path.display().to_string(), e))?;
            }
            if let Some(path) = summary {
                std::fs::write(&path, harness::emit_summary(&run_summary))
                    .map_err(|e| io_failure(&path.display().to_string(), e))?;
            }
            match format {
                Format::Json => print!("{}", harness::emit_summary(&run_summary)),
                Format::Text => print!("{}", text_summary(&run_summary)),
            }
            Ok(())
        }
        Command::Scenarios => {
            for (name, text) in harness::reference_scenarios() {
                let sc = Scenario::from_json(text).map_err(|e| Failure {
                    code: EXIT_INTERNAL,
                    message: format!("built-in scenario {name} is broken: {e}"),
                })?;
                println!("{name}\t{}\trounds={}", sc.variant, sc.rounds);
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            let sc = load_scenario(&scenario)?;
            println!("ok: {}", sc.config_digest());
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run_command(cli.command) {
        eprintln!("{}", f.message);
        std::process::exit(f.code);
    }
}
