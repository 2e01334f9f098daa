//! Experiment grids over the simulator, with the statistical checks the
//! protocol's complexity and termination claims boil down to.
//!
//! A grid is (strategy x system size x payload length) x seeds. Every
//! run gets its own derived master seed, so committees, payloads, and
//! schedules are fresh per seed while the whole grid stays reproducible.
//! Runs execute in parallel; everything reported is sorted by cell and
//! seed first, so output is byte-stable regardless of thread timing.

use cmvba_core::crypto::keyed_hash;
use cmvba_core::sim::{run_simulation, strategy_by_name, InstanceAudit, TraceMode};
use cmvba_core::SysConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct System {
    pub n: usize,
    pub f: usize,
}

/// Declarative description of a grid, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub strategies: Vec<String>,
    pub systems: Vec<System>,
    pub payload_lens: Vec<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: usize,
    pub seeds: u64,
    #[serde(default = "default_instances")]
    pub instances: u64,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_lambda() -> usize {
    32
}

fn default_instances() -> u64 {
    1
}

/// One measured instance of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub strategy: String,
    pub n: usize,
    pub f: usize,
    pub payload_len: usize,
    pub seed: u64,
    pub instance: u64,
    pub envelopes: u64,
    pub payload_bytes: u64,
    pub overhead_bytes: u64,
    pub bytes: u64,
    pub causal_depth: u64,
    pub iterations: u64,
    pub first_hit: Option<u64>,
    pub good_set_size: usize,
    pub max_holders: usize,
    pub zero_inputs: u64,
    pub fetches: u64,
    pub equivocations: u64,
}

/// Aggregates for one (strategy, n, f, payload_len) cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellStats {
    pub strategy: String,
    pub n: usize,
    pub f: usize,
    pub payload_len: usize,
    pub runs: u64,
    pub instances: u64,
    pub mean_envelopes: f64,
    pub mean_bytes: f64,
    pub mean_causal_depth: f64,
    pub mean_iterations: f64,
    pub mean_first_hit: Option<f64>,
    pub p95_envelopes: u64,
    pub p95_bytes: u64,
    pub p95_iterations: u64,
    /// mean envelopes / n^2.
    pub msg_ratio: f64,
    /// mean bytes / ((payload_len + lambda) * n^2).
    pub bit_ratio: f64,
    /// Fraction of instances whose best-held committee proposal reached
    /// the `2f + 1` holder quorum by the time recommendation completed.
    pub spread_rate: f64,
    pub iteration_bound_rate: f64,
    pub tally_rate: f64,
    /// Fitted decay base for the chance that the first `t` positions of
    /// the order all miss the covered set; `None` when misses never
    /// happen past the origin.
    pub decay_beta: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub rows: Vec<RunRow>,
    pub cells: Vec<CellStats>,
    /// Hash per (cell, seed), for replay comparisons.
    pub run_hashes: Vec<(String, u64, String)>,
}

/// Master seed for one run: the grid's base and the run seed, nothing
/// else, so any cell can be reproduced in isolation.
pub fn derive_master(base_seed: u64, run_seed: u64) -> [u8; 32] {
    keyed_hash(32, b"experiment-master", &[&base_seed.to_be_bytes(), &run_seed.to_be_bytes()])
        .try_into()
        .expect("32 bytes")
}

fn cell_label(strategy: &str, n: usize, payload_len: usize) -> String {
    format!("{strategy}/n={n}/l={payload_len}")
}

fn percentile_95(values: impl Iterator<Item = u64>) -> u64 {
    let mut v: Vec<u64> = values.collect();
    if v.is_empty() {
        return 0;
    }
    v.sort_unstable();
    let rank = (v.len() as f64 * 0.95).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Miss probability per order prefix length: entry `t` is the fraction
/// of runs whose first covered position lies past `t`. Entry 0 is 1 by
/// construction; runs with an empty covered set are skipped.
pub fn miss_curve(first_hits: &[u64], max_t: u64) -> Vec<f64> {
    let total = first_hits.len() as f64;
    (0..=max_t)
        .map(|t| {
            if total == 0.0 {
                return 0.0;
            }
            first_hits.iter().filter(|&&h| h > t).count() as f64 / total
        })
        .collect()
}

/// Least-squares fit of `miss(t) = beta^-t` through the origin, over the
/// prefix lengths with a nonzero miss fraction. `None` without at least
/// one such point past the origin.
pub fn fit_decay(first_hits: &[u64]) -> Option<f64> {
    let max_t = first_hits.iter().copied().max()?;
    let curve = miss_curve(first_hits, max_t);
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, &m) in curve.iter().enumerate().skip(1) {
        if m > 0.0 {
            num += t as f64 * m.ln();
            den += (t * t) as f64;
        }
    }
    if den == 0.0 {
        return None;
    }
    Some((-(num / den)).exp())
}

/// Core facts one audited instance must satisfy. Returns the
/// violations, empty when clean. `honest` is the honest party count of
/// the run the audit came from.
pub fn audit_violations(audit: &InstanceAudit, cfg: &SysConfig, honest: usize) -> Vec<String> {
    let mut out = Vec::new();
    let ctx = format!("instance {}", audit.instance);
    if audit.max_holders_at_spread_done < cfg.high_threshold() {
        out.push(format!(
            "{ctx}: best-spread proposal held by {} parties, need {}",
            audit.max_holders_at_spread_done,
            cfg.high_threshold()
        ));
    }
    let r = audit.iterations;
    if r > (cfg.f + 1) as u64 {
        out.push(format!("{ctx}: decision at position {r}, bound {}", cfg.f + 1));
    }
    // Counting bound on settled-to-zero positions: each one was withheld
    // from f + 1 honest parties, and f corrupt parties can only starve
    // f * (n - f) party-slots in total.
    if (r - 1) * (cfg.f + 1) as u64 > (cfg.f * (cfg.n - cfg.f)) as u64 {
        out.push(format!(
            "{ctx}: {} zero positions exceed the starvation budget {}",
            r - 1,
            cfg.f * (cfg.n - cfg.f)
        ));
    }
    let a = audit.honest_zero_inputs;
    let lower = (r - 1) * (cfg.f + 1) as u64;
    let upper = r * honest as u64;
    if a < lower || a > upper {
        out.push(format!("{ctx}: {a} reject inputs outside [{lower}, {upper}] for position {r}"));
    }
    if !audit.good_set.is_empty() {
        match audit.first_hit {
            Some(hit) if r <= hit => {}
            Some(hit) => out.push(format!("{ctx}: decision position {r} past first covered position {hit}")),
            None => out.push(format!("{ctx}: nonempty covered set but no first position")),
        }
    }
    if audit.honest_order_shares_before_combinable < cfg.low_threshold() {
        out.push(format!(
            "{ctx}: order became combinable with only {} honest share releases",
            audit.honest_order_shares_before_combinable
        ));
    }
    out
}

/// Run the whole grid. Simulation errors and audit violations are
/// returned as `Err` with every offending cell listed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, String> {
    let mut jobs = Vec::new();
    for strategy in &spec.strategies {
        for sys in &spec.systems {
            for &payload_len in &spec.payload_lens {
                for seed in 0..spec.seeds {
                    jobs.push((strategy.clone(), sys.n, sys.f, payload_len, seed));
                }
            }
        }
    }

    let outcomes: Vec<Result<(Vec<RunRow>, String), String>> = jobs
        .par_iter()
        .map(|(strategy, n, f, payload_len, seed)| {
            let label = format!("{}/seed={seed}", cell_label(strategy, *n, *payload_len));
            let cfg = SysConfig::new(*n, *f, *payload_len, spec.lambda, derive_master(spec.base_seed, *seed))
                .map_err(|e| format!("{label}: {e}"))?;
            let strat = strategy_by_name(&cfg, strategy)
                .ok_or_else(|| format!("{label}: unknown strategy"))?;
            let report = run_simulation(&cfg, &strat, *seed, spec.instances, TraceMode::Hash)
                .map_err(|e| format!("{label}: {e}"))?;
            let honest = n - strat.byzantine.len();
            let mut rows = Vec::new();
            for audit in &report.audits {
                for v in audit_violations(audit, &cfg, honest) {
                    return Err(format!("{label}: {v}"));
                }
                let m = &report.metrics.per_instance[&audit.instance];
                rows.push(RunRow {
                    strategy: strategy.clone(),
                    n: *n,
                    f: *f,
                    payload_len: *payload_len,
                    seed: *seed,
                    instance: audit.instance,
                    envelopes: m.envelopes,
                    payload_bytes: m.payload_bytes,
                    overhead_bytes: m.overhead_bytes,
                    bytes: m.payload_bytes + m.overhead_bytes,
                    causal_depth: m.causal_depth,
                    iterations: audit.iterations,
                    first_hit: audit.first_hit,
                    good_set_size: audit.good_set.len(),
                    max_holders: audit.max_holders_at_spread_done,
                    zero_inputs: audit.honest_zero_inputs,
                    fetches: m.fetches,
                    equivocations: m.equivocations,
                });
            }
            Ok((rows, report.trace_hash))
        })
        .collect();

    let mut rows = Vec::new();
    let mut run_hashes = Vec::new();
    let mut errors = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok((mut r, hash)) => {
                run_hashes.push((cell_label(&job.0, job.1, job.3), job.4, hash));
                rows.append(&mut r);
            }
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(errors.join("\n"));
    }

    let mut cells = Vec::new();
    for strategy in &spec.strategies {
        for sys in &spec.systems {
            for &payload_len in &spec.payload_lens {
                let cell: Vec<&RunRow> = rows
                    .iter()
                    .filter(|r| {
                        r.strategy == *strategy && r.n == sys.n && r.payload_len == payload_len
                    })
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                let count = cell.len() as f64;
                let mean = |get: &dyn Fn(&RunRow) -> f64| -> f64 {
                    cell.iter().map(|r| get(r)).sum::<f64>() / count
                };
                let mean_envelopes = mean(&|r| r.envelopes as f64);
                let mean_bytes = mean(&|r| r.bytes as f64);
                let hits: Vec<u64> = cell.iter().filter_map(|r| r.first_hit).collect();
                let nn = (sys.n * sys.n) as f64;
                let cfg_for_rates =
                    SysConfig::new(sys.n, sys.f, payload_len, spec.lambda, [0u8; 32]).unwrap();
                let spread = cell
                    .iter()
                    .filter(|r| r.max_holders >= cfg_for_rates.high_threshold())
                    .count() as f64
                    / count;
                let iter_ok = cell.iter().filter(|r| r.iterations <= (sys.f + 1) as u64).count()
                    as f64
                    / count;
                let tally_ok = cell
                    .iter()
                    .filter(|r| {
                        let lower = (r.iterations - 1) * (sys.f + 1) as u64;
                        r.zero_inputs >= lower
                    })
                    .count() as f64
                    / count;
                cells.push(CellStats {
                    strategy: strategy.clone(),
                    n: sys.n,
                    f: sys.f,
                    payload_len,
                    runs: spec.seeds,
                    instances: spec.instances,
                    mean_envelopes,
                    mean_bytes,
                    mean_causal_depth: mean(&|r| r.causal_depth as f64),
                    mean_iterations: mean(&|r| r.iterations as f64),
                    mean_first_hit: if hits.is_empty() {
                        None
                    } else {
                        Some(hits.iter().sum::<u64>() as f64 / hits.len() as f64)
                    },
                    p95_envelopes: percentile_95(cell.iter().map(|r| r.envelopes)),
                    p95_bytes: percentile_95(cell.iter().map(|r| r.bytes)),
                    p95_iterations: percentile_95(cell.iter().map(|r| r.iterations)),
                    msg_ratio: mean_envelopes / nn,
                    bit_ratio: mean_bytes / ((payload_len + spec.lambda) as f64 * nn),
                    spread_rate: spread,
                    iteration_bound_rate: iter_ok,
                    tally_rate: tally_ok,
                    decay_beta: fit_decay(&hits),
                });
            }
        }
    }

    Ok(ExperimentResult { spec: spec.clone(), rows, cells, run_hashes })
}

/// Flatness of a set of labeled ratios: every point must sit within
/// `tolerance` (a fraction, e.g. 0.35) of the points' mean. A quantity
/// that actually grows with the label blows out of the band.
pub fn check_scaling(points: &[(String, f64)], tolerance: f64) -> Result<String, String> {
    if points.len() < 2 {
        return Err("scaling check needs at least two points".into());
    }
    if points.iter().any(|(_, v)| !v.is_finite() || *v <= 0.0) {
        return Err(format!("non-positive ratio in {points:?}"));
    }
    let mean = points.iter().map(|(_, v)| v).sum::<f64>() / points.len() as f64;
    let (worst_l, worst_v) = points
        .iter()
        .max_by(|a, b| ((a.1 - mean).abs()).total_cmp(&(b.1 - mean).abs()))
        .unwrap();
    let deviation = (worst_v - mean).abs() / mean;
    let detail = format!(
        "worst deviation {:.1}% ({worst_v:.3} at {worst_l}, mean {mean:.3}, band ±{:.0}%)",
        deviation * 100.0,
        tolerance * 100.0
    );
    if deviation <= tolerance {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn rows_to_csv(rows: &[RunRow]) -> String {
    let mut out = String::from(
        "strategy,n,f,payload_len,seed,instance,envelopes,payload_bytes,overhead_bytes,bytes,causal_depth,iterations,first_hit,good_set_size,max_holders,zero_inputs,fetches,equivocations\n",
    );
    for r in rows {
        let hit = r.first_hit.map(|h| h.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.strategy,
            r.n,
            r.f,
            r.payload_len,
            r.seed,
            r.instance,
            r.envelopes,
            r.payload_bytes,
            r.overhead_bytes,
            r.bytes,
            r.causal_depth,
            r.iterations,
            hit,
            r.good_set_size,
            r.max_holders,
            r.zero_inputs,
            r.fetches,
            r.equivocations
        )
        .expect("string write");
    }
    out
}

pub fn cells_table(cells: &[CellStats]) -> String {
    let mut out = String::from(
        "strategy                      n    l     runs  m/n^2   b/((l+L)n^2)  mean_R  mean_hit  spread\n",
    );
    for c in cells {
        let hit = c.mean_first_hit.map(|h| format!("{h:.2}")).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:<28} {:>3} {:>5} {:>7}  {:>5.3}  {:>12.3}  {:>6.2}  {:>8}  {:>5.1}%",
            c.strategy,
            c.n,
            c.payload_len,
            c.runs,
            c.msg_ratio,
            c.bit_ratio,
            c.mean_iterations,
            hit,
            c.spread_rate * 100.0
        )
        .expect("string write");
    }
    out
}
