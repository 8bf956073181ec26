//! `momcc`: validate and run hosting-market scenarios, compare against the
//! WAN cloud baseline, and snapshot or restore governor state.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 trace violations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::Value;

use momcc_core::engine::{self, parse_scenario, BaselineMode, MetricsReport, Scenario, ValidationError};
use momcc_core::governor::{Governor, PartyClass};
use momcc_core::wire::{decode_requirements, encode_requirements};

#[derive(Parser, Debug)]
#[command(name = "momcc", version, about = "Market-oriented mobile service hosting simulator")]
struct Cli {
    /// Suppress the start-up banner (the only nondeterministic output).
    #[arg(long, global = true)]
    no_banner: bool,
    /// Defaults file layered between the built-in defaults and the scenario.
    #[arg(long, global = true, value_name = "FILE")]
    defaults: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write metrics.json, metrics.csv, trace.log and ledger.csv.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Run both modes over K seeds and print a comparison table.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_name = "K", default_value_t = 5)]
        seeds: u32,
    },
    /// Report every problem in a scenario file.
    Validate { scenario: PathBuf },
    /// Run a scenario and save the resulting governor databases.
    Snapshot {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Check a snapshot's integrity and summarize it.
    Restore { state: PathBuf },
    /// Decode a host-requirements XML message and print its canonical form.
    Requirements { xml: PathBuf },
}

/// Errors that map to exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if !cli.no_banner {
        eprintln!("momcc {} started {}", env!("CARGO_PKG_VERSION"), chrono::Utc::now().to_rfc3339());
    }
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_scenario(path: &Path, defaults: Option<&Path>) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    let defaults: Option<Value> = match defaults {
        Some(p) => {
            let t = fs::read_to_string(p).with_context(|| format!("reading defaults {}", p.display()))?;
            Some(serde_json::from_str(&t).with_context(|| format!("parsing defaults {}", p.display()))?)
        }
        None => None,
    };
    parse_scenario(&text, defaults.as_ref()).map_err(|e: ValidationError| anyhow::Error::new(e).context(path.display().to_string()))
}

fn execute(cli: &Cli) -> Result<u8> {
    let defaults = cli.defaults.as_deref();
    match &cli.command {
        Command::Run { scenario, seed, out } => {
            let mut s = load_scenario(scenario, defaults)?;
            if let Some(seed) = seed {
                s.seed = *seed;
            }
            let output = engine::run(&s)?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("metrics.json"), output.metrics.to_json())?;
            fs::write(out.join("metrics.csv"), output.metrics.to_csv())?;
            fs::write(out.join("trace.log"), output.trace_log())?;
            fs::write(out.join("ledger.csv"), output.ledger_csv())?;
            println!("{}", summary_line(&output.metrics));
            if output.metrics.trace_violations > 0 {
                eprintln!("{} allocation trace(s) violate the hosting handshake", output.metrics.trace_violations);
                return Ok(2);
            }
            Ok(0)
        }
        Command::Compare { scenario, seeds } => {
            if *seeds == 0 {
                return Err(UsageError("--seeds must be at least 1".into()).into());
            }
            let s = load_scenario(scenario, defaults)?;
            let (table, violations) = compare(&s, *seeds)?;
            print!("{table}");
            Ok(if violations > 0 { 2 } else { 0 })
        }
        Command::Validate { scenario } => {
            load_scenario(scenario, defaults)?;
            println!("{}: ok", scenario.display());
            Ok(0)
        }
        Command::Snapshot { scenario, seed, out } => {
            let mut s = load_scenario(scenario, defaults)?;
            if let Some(seed) = seed {
                s.seed = *seed;
            }
            let output = engine::run(&s)?;
            fs::write(out, output.governor.snapshot_text()).with_context(|| format!("writing {}", out.display()))?;
            println!("snapshot written to {}", out.display());
            Ok(0)
        }
        Command::Restore { state } => {
            let text = fs::read_to_string(state).with_context(|| format!("reading {}", state.display()))?;
            let gov = Governor::restore(Default::default(), &text).with_context(|| format!("restoring {}", state.display()))?;
            print!("{}", restore_summary(&gov));
            Ok(0)
        }
        Command::Requirements { xml } => {
            let bytes = fs::read(xml).with_context(|| format!("reading {}", xml.display()))?;
            let msg = decode_requirements(&bytes).with_context(|| format!("decoding {}", xml.display()))?;
            print!("{}", String::from_utf8(encode_requirements(&msg)).expect("encoder emits UTF-8"));
            Ok(0)
        }
    }
}

fn summary_line(m: &MetricsReport) -> String {
    let latency = m.latency_ms.as_ref().map_or("n/a".to_owned(), |l| format!("{:.1} ms", l.mean));
    let availability = m.availability.fraction().map_or("no demand".to_owned(), |a| format!("{a:.3}"));
    format!(
        "mode={} seed={} invocations={} availability={} mean_latency={} energy={} mWh trace_violations={}",
        m.baseline_mode, m.seed, m.invocations.attempted, availability, latency, m.energy_mwh, m.trace_violations
    )
}

struct Range3 {
    values: Vec<f64>,
}

impl Range3 {
    fn cell(&self) -> String {
        if self.values.is_empty() {
            return "n/a".into();
        }
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("{mean:.3} [{min:.3}, {max:.3}]")
    }
}

fn compare(base: &Scenario, seeds: u32) -> Result<(String, usize)> {
    let mut out = String::new();
    let mut violations = 0;
    let _ = writeln!(out, "{:<6} {:<10} {:>14} {:>14} {:>12}", "seed", "mode", "latency_ms", "availability", "energy_mwh");
    let modes = [BaselineMode::Momcc, BaselineMode::WanCloud];
    let mut per_mode: Vec<[Range3; 3]> =
        modes.iter().map(|_| [Range3 { values: vec![] }, Range3 { values: vec![] }, Range3 { values: vec![] }]).collect();
    for k in 0..seeds {
        for (mi, mode) in modes.iter().enumerate() {
            let mut s = base.clone();
            s.seed = base.seed.wrapping_add(u64::from(k));
            s.baseline_mode = *mode;
            let m = engine::run(&s)?.metrics;
            violations += m.trace_violations;
            let latency = m.latency_ms.as_ref().map(|l| l.mean);
            let availability = m.availability.fraction();
            let fmt = |x: Option<f64>| x.map_or("n/a".to_owned(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "{:<6} {:<10} {:>14} {:>14} {:>12}",
                s.seed,
                mode.to_string(),
                fmt(latency),
                fmt(availability),
                m.energy_mwh
            );
            per_mode[mi][0].values.extend(latency);
            per_mode[mi][1].values.extend(availability);
            per_mode[mi][2].values.push(m.energy_mwh as f64);
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "mean [min, max] over {seeds} seed(s)");
    let _ = writeln!(out, "{:<10} {:>28} {:>28} {:>32}", "mode", "latency_ms", "availability", "energy_mwh");
    for (mi, mode) in modes.iter().enumerate() {
        let [l, a, e] = &per_mode[mi];
        let _ = writeln!(out, "{:<10} {:>28} {:>28} {:>32}", mode.to_string(), l.cell(), a.cell(), e.cell());
    }
    Ok((out, violations))
}

fn restore_summary(gov: &Governor) -> String {
    let mut out = String::new();
    let (services, active, hosts, reports) = gov.read(|s, h| (s.len(), s.active().count(), h.len(), h.reports().len()));
    let revenue = gov.revenue_by_class();
    let _ = writeln!(out, "services: {services} ({active} active)");
    let _ = writeln!(out, "hosts: {hosts}");
    let _ = writeln!(out, "execution reports: {reports}");
    let _ = writeln!(out, "ledger entries: {}", gov.ledger_len());
    for class in [PartyClass::Developer, PartyClass::Host, PartyClass::Governor] {
        let _ = writeln!(out, "revenue {}: {}", format!("{class:?}").to_lowercase(), revenue.get(&class).copied().unwrap_or_default());
    }
    let violations = gov.check_invariants();
    let _ = writeln!(out, "invariants: {}", if violations.is_empty() { "ok".to_owned() } else { violations.join("; ") });
    out
}
