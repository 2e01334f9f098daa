//! `cmvba`: seeded simulations, experiment grids, and trace checks from
//! the command line. Exit code 0 means every assertion passed.

use clap::{Args, Parser, Subcommand};
use cmvba_core::config::ProtocolOptions;
use cmvba_core::sim::{
    parse_trace, replay_check, strategy_by_name, Simulation, TraceLine, TraceMode, BUILTIN_NAMES,
};
use cmvba_core::SysConfig;
use cmvba_harness::{
    audit_violations, cells_table, derive_master, rows_to_csv, run_experiment, ExperimentSpec,
};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cmvba",
    version,
    about = "Committee-driven multi-valued agreement: simulate, measure, replay"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One seeded simulation, printing decisions and checks.
    Run(RunArgs),
    /// A grid of runs from a JSON spec, with CSV and summary output.
    Experiment(ExperimentArgs),
    /// Replay every trace in a directory and re-check its run's facts.
    Check(CheckArgs),
    /// Re-run one trace and compare it line by line.
    Replay(ReplayArgs),
    /// List the built-in adversary strategies.
    Strategies,
}

#[derive(Args)]
struct RunArgs {
    /// Party count.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Corruption budget; defaults to the largest with n >= 3f + 1.
    #[arg(long)]
    f: Option<usize>,
    /// Sequential protocol instances.
    #[arg(long, default_value_t = 1)]
    instances: u64,
    /// Run seed: committees, payloads, and the schedule all follow it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid base folded into the master seed, matching experiment cells.
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Adversary strategy; see `strategies`.
    #[arg(long, default_value = "honest_random")]
    adversary: String,
    /// Request payload length in bytes.
    #[arg(long, default_value_t = 32)]
    payload_bytes: usize,
    /// Digest and share length in bytes.
    #[arg(long, default_value_t = 32)]
    lambda: usize,
    /// Recommend every proven proposal instead of only the first.
    #[arg(long)]
    recommend_per_candidate: bool,
    /// Write the full JSONL trace here (CMVBA_TRACE_DIR prefixes
    /// relative paths).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON file with the grid description.
    #[arg(long)]
    spec: PathBuf,
    /// Directory for rows.csv and summary.json; stdout gets the table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Directory holding .jsonl traces.
    #[arg(long)]
    traces: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace file to re-run.
    #[arg(long)]
    trace: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Run(args) => run_once(&args),
        Cmd::Experiment(args) => experiment(&args),
        Cmd::Check(args) => check_traces(&args),
        Cmd::Replay(args) => replay_one(&args.trace).map(|line| println!("{line}")),
        Cmd::Strategies => {
            for name in BUILTIN_NAMES {
                println!("{name}");
            }
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_trace_path(p: &Path) -> PathBuf {
    match std::env::var_os("CMVBA_TRACE_DIR") {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn run_once(args: &RunArgs) -> Result<(), String> {
    let f = args.f.unwrap_or((args.n.saturating_sub(1)) / 3);
    let master = derive_master(args.base_seed, args.seed);
    let cfg = SysConfig::new(args.n, f, args.payload_bytes, args.lambda, master)
        .map_err(|e| e.to_string())?;
    let strategy = strategy_by_name(&cfg, &args.adversary)
        .ok_or_else(|| format!("unknown strategy {:?}; try `cmvba strategies`", args.adversary))?;
    let mode = if args.trace_out.is_some() { TraceMode::Full } else { TraceMode::Hash };
    let opts = ProtocolOptions { recommend_per_candidate: args.recommend_per_candidate };
    let report = Simulation::new(cfg.clone(), strategy.clone(), args.seed, args.instances)
        .options(opts)
        .trace_mode(mode)
        .run()
        .map_err(|e| e.to_string())?;

    println!(
        "run n={} f={} strategy={} seed={} instances={}",
        args.n, f, report.strategy, report.seed, report.instances
    );
    let honest = args.n - strategy.byzantine.len();
    let mut failures = 0usize;
    for audit in &report.audits {
        let m = &report.metrics.per_instance[&audit.instance];
        println!(
            "instance {}: candidate {} at position {} (committee {:?}, covered {:?})",
            audit.instance,
            audit.decided_candidate,
            audit.iterations,
            audit.committee,
            audit.good_set,
        );
        println!(
            "  envelopes {} bytes {} causal depth {} fetches {}",
            m.envelopes,
            m.payload_bytes + m.overhead_bytes,
            m.causal_depth,
            m.fetches
        );
        for v in audit_violations(audit, &cfg, honest) {
            println!("  VIOLATION: {v}");
            failures += 1;
        }
    }
    println!("trace hash {}", report.trace_hash);

    if let Some(out) = &args.trace_out {
        let path = resolve_trace_path(out);
        let lines = report.trace.as_ref().expect("full mode retains lines");
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
        }
        fs::write(&path, lines.join("\n") + "\n")
            .map_err(|e| format!("writing {}: {e}", path.display()))?;
        println!("trace written to {}", path.display());
    }
    if failures > 0 {
        return Err(format!("{failures} violation(s)"));
    }
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<(), String> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| format!("reading {}: {e}", args.spec.display()))?;
    let spec: ExperimentSpec =
        serde_json::from_str(&text).map_err(|e| format!("parsing {}: {e}", args.spec.display()))?;
    let result = run_experiment(&spec)?;
    print!("{}", cells_table(&result.cells));
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
        let csv_path = dir.join("rows.csv");
        fs::write(&csv_path, rows_to_csv(&result.rows))
            .map_err(|e| format!("writing {}: {e}", csv_path.display()))?;
        let summary_path = dir.join("summary.json");
        let summary = serde_json::json!({
            "spec": result.spec,
            "cells": result.cells,
            "run_hashes": result.run_hashes,
        });
        fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("serializable"))
            .map_err(|e| format!("writing {}: {e}", summary_path.display()))?;
        println!("wrote {} and {}", csv_path.display(), summary_path.display());
    }
    Ok(())
}

/// Re-run one trace from its header and compare the produced lines with
/// the recorded ones. Returns a human-readable pass line.
fn replay_one(path: &Path) -> Result<String, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    let lines = parse_trace(&text).map_err(|e| format!("parsing {}: {e}", path.display()))?;
    let report = replay_check(&lines, &ProtocolOptions::default()).map_err(|e| e.to_string())?;
    let replayed = report.trace.as_ref().expect("replay retains lines");
    let recorded: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if recorded.len() != replayed.len() {
        return Err(format!(
            "{}: replay produced {} lines, trace has {}",
            path.display(),
            replayed.len(),
            recorded.len()
        ));
    }
    for (i, (a, b)) in recorded.iter().zip(replayed.iter()).enumerate() {
        if *a != b {
            return Err(format!("{}: first divergence at line {}", path.display(), i + 1));
        }
    }
    Ok(format!("{}: {} lines match, hash {}", path.display(), replayed.len(), report.trace_hash))
}

fn check_traces(args: &CheckArgs) -> Result<(), String> {
    let entries = fs::read_dir(&args.traces)
        .map_err(|e| format!("reading {}: {e}", args.traces.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no .jsonl traces under {}", args.traces.display()));
    }
    let mut failures = 0usize;
    for path in &paths {
        match check_one(path) {
            Ok(line) => println!("PASS {line}"),
            Err(e) => {
                println!("FAIL {e}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(format!("{failures} of {} trace(s) failed", paths.len()));
    }
    println!("{} trace(s) clean", paths.len());
    Ok(())
}

/// Replay a trace, then re-run the per-instance fact checks on the
/// replayed report.
fn check_one(path: &Path) -> Result<String, String> {
    let line = replay_one(path)?;
    let text =
        fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    let lines = parse_trace(&text).map_err(|e| format!("parsing {}: {e}", path.display()))?;
    let Some(TraceLine::Header { n, f, payload_len, lambda, master_seed, strategy, .. }) =
        lines.first()
    else {
        return Err(format!("{}: no header line", path.display()));
    };
    let master: [u8; 32] = hex::decode(master_seed)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| format!("{}: bad master seed", path.display()))?;
    let cfg =
        SysConfig::new(*n, *f, *payload_len, *lambda, master).map_err(|e| e.to_string())?;
    let strat = strategy_by_name(&cfg, strategy)
        .ok_or_else(|| format!("{}: unknown strategy {strategy:?}", path.display()))?;
    let honest = cfg.n - strat.byzantine.len();
    let report = replay_check(&lines, &ProtocolOptions::default()).map_err(|e| e.to_string())?;
    let mut violations = Vec::new();
    for audit in &report.audits {
        violations.extend(audit_violations(audit, &cfg, honest));
    }
    if violations.is_empty() {
        Ok(line)
    } else {
        Err(format!("{}: {}", path.display(), violations.join("; ")))
    }
}
