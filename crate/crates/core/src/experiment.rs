//! Replicated experiments: population sweeps, mode comparisons,
//! movement-depth sweeps and the CSV/JSON files they produce.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::graph::NodeId;
use crate::scenario::Scenario;
use crate::sim::{OscillationPolicy, RoutingMode, SimConfig, SimResult, Simulation};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub scenario: Option<PathBuf>,
    pub populations: Vec<usize>,
    pub modes: Vec<RoutingMode>,
    pub replications: usize,
    pub base_seed: u64,
    /// Explicit seeds, one per replication; otherwise `base_seed + index`.
    pub seeds: Option<Vec<u64>>,
    pub policy: OscillationPolicy,
    /// Movement depths to sweep, if any.
    pub sweep_depths: Vec<u32>,
    pub sweep_population: usize,
    pub sweep_mode: RoutingMode,
    pub record_events: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            scenario: None,
            populations: vec![30, 60, 90, 120],
            modes: vec![RoutingMode::Dijkstra, RoutingMode::CpnDistance, RoutingMode::CpnTime],
            replications: 10,
            base_seed: 1,
            seeds: None,
            policy: OscillationPolicy::default(),
            sweep_depths: Vec::new(),
            sweep_population: 120,
            sweep_mode: RoutingMode::CpnTime,
            record_events: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.replications < 1 {
            return Err("replications must be at least 1".into());
        }
        if self.populations.is_empty() {
            return Err("at least one population is required".into());
        }
        if self.modes.is_empty() {
            return Err("at least one routing mode is required".into());
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.replications {
                return Err(format!("{} seeds given for {} replications", seeds.len(), self.replications));
            }
        }
        if self.sweep_depths.contains(&0) {
            return Err("movement depths start at 1".into());
        }
        self.policy.validate()
    }

    pub fn seed(&self, replication: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[replication],
            None => self.base_seed.wrapping_add(replication as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub population: usize,
    pub mode: RoutingMode,
    pub replication: usize,
    pub result: SimResult,
}

impl RunRecord {
    /// Time the last survivor got out, or the end of the run if nobody did.
    pub fn evacuation_time(&self) -> f64 {
        self.result.last_egress_time().unwrap_or(self.result.final_time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    /// Sample statistics; std is zero for a single value.
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Stats {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub population: usize,
    pub mode: RoutingMode,
    pub replications: usize,
    pub survivors: Stats,
    pub evacuation_time: Stats,
    pub congestion: Stats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRow {
    pub depth: u32,
    pub survivors: Stats,
    pub is_argmax: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub depth_sweep: Vec<DepthRow>,
}

fn sim_config(spec: &ExperimentSpec, population: usize, mode: RoutingMode, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::new(population, mode, seed);
    cfg.policy = spec.policy;
    cfg.record_events = spec.record_events;
    cfg
}

/// Runs every (population, mode, replication) cell in parallel.
pub fn run_replications(scenario: &Scenario, spec: &ExperimentSpec) -> Vec<RunRecord> {
    let jobs: Vec<(usize, RoutingMode, usize)> = spec
        .populations
        .iter()
        .flat_map(|&p| {
            spec.modes
                .iter()
                .flat_map(move |&m| (0..spec.replications).map(move |r| (p, m, r)))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(population, mode, replication)| {
            let cfg = sim_config(spec, population, mode, spec.seed(replication));
            RunRecord {
                population,
                mode,
                replication,
                result: Simulation::new(scenario, cfg).run(),
            }
        })
        .collect()
}

/// Per-cell aggregates, in the order populations and modes appear in the spec.
pub fn summarize(spec: &ExperimentSpec, runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &population in &spec.populations {
        for &mode in &spec.modes {
            let cell: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.population == population && r.mode == mode)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let col = |f: &dyn Fn(&RunRecord) -> f64| Stats::of(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            rows.push(SummaryRow {
                population,
                mode,
                replications: cell.len(),
                survivors: col(&|r| r.result.survivors as f64),
                evacuation_time: col(&|r| r.evacuation_time()),
                congestion: col(&|r| r.result.congestion_events as f64),
            });
        }
    }
    rows
}

pub fn run_experiment(scenario: &Scenario, spec: &ExperimentSpec) -> Result<ExperimentOutput, String> {
    spec.validate()?;
    let runs = run_replications(scenario, spec);
    let summary = summarize(spec, &runs);
    let depth_sweep = if spec.sweep_depths.is_empty() {
        Vec::new()
    } else {
        movement_depth_sweep(scenario, spec, &spec.sweep_depths)
    };
    Ok(ExperimentOutput {
        runs,
        summary,
        depth_sweep,
    })
}

/// Mean survivors per movement depth for the sweep mode and population.
pub fn movement_depth_sweep(scenario: &Scenario, spec: &ExperimentSpec, depths: &[u32]) -> Vec<DepthRow> {
    let jobs: Vec<(u32, usize)> = depths
        .iter()
        .flat_map(|&d| (0..spec.replications).map(move |r| (d, r)))
        .collect();
    let survivors: Vec<(u32, f64)> = jobs
        .into_par_iter()
        .map(|(depth, r)| {
            let mut cfg = sim_config(spec, spec.sweep_population, spec.sweep_mode, spec.seed(r));
            cfg.record_events = false;
            cfg.policy.movement_depth = depth;
            (depth, Simulation::new(scenario, cfg).run().survivors as f64)
        })
        .collect();
    let mut rows: Vec<DepthRow> = depths
        .iter()
        .map(|&depth| {
            let v: Vec<f64> = survivors.iter().filter(|s| s.0 == depth).map(|s| s.1).collect();
            DepthRow {
                depth,
                survivors: Stats::of(&v),
                is_argmax: false,
            }
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .max_by(|a, b| {
            a.1.survivors
                .mean
                .total_cmp(&b.1.survivors.mean)
                .then(b.0.cmp(&a.0))
        })
        .map(|(i, _)| i);
    if let Some(i) = best {
        rows[i].is_argmax = true;
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVisitRow {
    pub src: NodeId,
    pub dst: NodeId,
    pub visits: u64,
}

/// Traversal counts per edge, summed over the given runs.
pub fn emit_edge_visits(scenario: &Scenario, results: &[&SimResult]) -> Vec<EdgeVisitRow> {
    scenario
        .graph
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| EdgeVisitRow {
            src: e.src,
            dst: e.dst,
            visits: results.iter().map(|r| r.edge_visits[k]).sum(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitShares {
    /// Pooled fraction of exited evacuees per exit.
    pub shares: Vec<(NodeId, f64)>,
    pub warning: Option<String>,
}

pub fn emit_exit_shares(scenario: &Scenario, results: &[&SimResult]) -> ExitShares {
    let exits: Vec<NodeId> = scenario.graph.exits().collect();
    let counts: Vec<usize> = exits
        .iter()
        .map(|x| {
            results
                .iter()
                .flat_map(|r| r.exit_counts.iter())
                .filter(|(n, _)| n == x)
                .map(|&(_, c)| c)
                .sum()
        })
        .collect();
    let total: usize = counts.iter().sum();
    let shares = exits
        .iter()
        .zip(&counts)
        .map(|(&x, &c)| (x, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect();
    let warning = (exits.len() < 2).then(|| "scenario has a single exit; exit shares are trivially 1".to_string());
    ExitShares { shares, warning }
}

/// SHA-256 over a git-style blob header plus the content.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn label(scenario: &Scenario, n: NodeId) -> String {
    scenario.graph.nodes()[n.index()]
        .label
        .clone()
        .unwrap_or_else(|| n.to_string())
}

fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: Vec<Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

fn stats_cells(s: &Stats) -> [String; 4] {
    [s.mean.to_string(), s.std.to_string(), s.min.to_string(), s.max.to_string()]
}

/// Writes all tables plus the run manifest into `dir`. `scenario_bytes`
/// is the exact scenario text that was loaded.
pub fn write_outputs(
    dir: &Path,
    scenario: &Scenario,
    scenario_bytes: &[u8],
    spec: &ExperimentSpec,
    out: &ExperimentOutput,
) -> io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut warnings = Vec::new();
    let exits: Vec<NodeId> = scenario.graph.exits().collect();

    let mut header = vec![
        "population".to_string(),
        "mode".into(),
        "replication".into(),
        "seed".into(),
        "survivors".into(),
        "dead".into(),
        "stranded".into(),
        "congestion_events".into(),
        "evacuation_time".into(),
        "mean_egress_time".into(),
        "route_switches".into(),
        "forced_replans".into(),
        "sp_launched".into(),
        "sp_delivered".into(),
        "sp_dropped".into(),
        "acks_applied".into(),
    ];
    header.extend(exits.iter().map(|&x| format!("exit_{}", label(scenario, x))));
    let rows = out
        .runs
        .iter()
        .map(|r| {
            let mut row = vec![
                r.population.to_string(),
                r.mode.to_string(),
                r.replication.to_string(),
                r.result.seed.to_string(),
                r.result.survivors.to_string(),
                r.result.dead.to_string(),
                r.result.stranded.to_string(),
                r.result.congestion_events.to_string(),
                r.evacuation_time().to_string(),
                r.result.mean_egress_time().map_or(String::new(), |t| t.to_string()),
                r.result.route_switches.to_string(),
                r.result.forced_replans.to_string(),
                r.result.cpn.sp_launched.to_string(),
                r.result.cpn.sp_delivered.to_string(),
                r.result.cpn.sp_dropped.to_string(),
                r.result.cpn.acks_applied.to_string(),
            ];
            row.extend(r.result.exit_counts.iter().map(|&(_, c)| c.to_string()));
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(dir.join("runs.csv"), &header_refs, rows)?;

    let rows = out
        .summary
        .iter()
        .map(|s| {
            let mut row = vec![s.population.to_string(), s.mode.to_string(), s.replications.to_string()];
            row.extend(stats_cells(&s.survivors));
            row.extend(stats_cells(&s.evacuation_time));
            row.extend(stats_cells(&s.congestion));
            row
        })
        .collect();
    write_csv(
        dir.join("summary.csv"),
        &[
            "population",
            "mode",
            "replications",
            "survivors_mean",
            "survivors_std",
            "survivors_min",
            "survivors_max",
            "evacuation_time_mean",
            "evacuation_time_std",
            "evacuation_time_min",
            "evacuation_time_max",
            "congestion_mean",
            "congestion_std",
            "congestion_min",
            "congestion_max",
        ],
        rows,
    )?;

    let mut header = vec!["population".to_string()];
    header.extend(spec.modes.iter().map(|m| m.to_string()));
    let rows = spec
        .populations
        .iter()
        .map(|&p| {
            let mut row = vec![p.to_string()];
            row.extend(spec.modes.iter().map(|&m| {
                out.summary
                    .iter()
                    .find(|s| s.population == p && s.mode == m)
                    .map_or(String::new(), |s| s.congestion.mean.to_string())
            }));
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(dir.join("congestion_table.csv"), &header_refs, rows)?;

    let mut visit_rows = Vec::new();
    let mut share_rows = Vec::new();
    for &p in &spec.populations {
        for &m in &spec.modes {
            let results: Vec<&SimResult> = out
                .runs
                .iter()
                .filter(|r| r.population == p && r.mode == m)
                .map(|r| &r.result)
                .collect();
            for v in emit_edge_visits(scenario, &results) {
                visit_rows.push(vec![
                    m.to_string(),
                    p.to_string(),
                    label(scenario, v.src),
                    label(scenario, v.dst),
                    v.visits.to_string(),
                ]);
            }
            let shares = emit_exit_shares(scenario, &results);
            if let Some(w) = shares.warning {
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
            for (x, s) in shares.shares {
                share_rows.push(vec![m.to_string(), p.to_string(), label(scenario, x), s.to_string()]);
            }
        }
    }
    write_csv(
        dir.join("edge_visits.csv"),
        &["mode", "population", "src", "dst", "visit_count"],
        visit_rows,
    )?;
    write_csv(dir.join("exit_shares.csv"), &["mode", "population", "exit", "share"], share_rows)?;

    if !out.depth_sweep.is_empty() {
        let rows = out
            .depth_sweep
            .iter()
            .map(|d| {
                vec![
                    d.depth.to_string(),
                    d.survivors.mean.to_string(),
                    d.survivors.std.to_string(),
                    d.is_argmax.to_string(),
                ]
            })
            .collect();
        write_csv(
            dir.join("depth_sweep.csv"),
            &["movement_depth", "survivors_mean", "survivors_std", "argmax"],
            rows,
        )?;
    }

    if spec.record_events {
        let events = dir.join("events");
        fs::create_dir_all(&events)?;
        for r in &out.runs {
            let name = format!("{}_{}_{}.csv", r.mode, r.population, r.replication);
            fs::write(events.join(name), r.result.event_log_csv())?;
        }
    }

    #[derive(Serialize)]
    struct Manifest<'a> {
        spec: &'a ExperimentSpec,
        scenario_name: &'a Option<String>,
        scenario_sha256: String,
        seeds: Vec<u64>,
        files: Vec<&'static str>,
    }
    let mut files = vec![
        "runs.csv",
        "summary.csv",
        "congestion_table.csv",
        "edge_visits.csv",
        "exit_shares.csv",
    ];
    if !out.depth_sweep.is_empty() {
        files.push("depth_sweep.csv");
    }
    let manifest = Manifest {
        spec,
        scenario_name: &scenario.name,
        scenario_sha256: content_hash(scenario_bytes),
        seeds: (0..spec.replications).map(|r| spec.seed(r)).collect(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_values() {
        let s = Stats::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max), (2.0, 9.0));
        assert_eq!(Stats::of(&[3.0]).std, 0.0);
    }

    #[test]
    fn seeds_derive_from_base() {
        let spec = ExperimentSpec {
            base_seed: 40,
            ..Default::default()
        };
        assert_eq!(spec.seed(0), 40);
        assert_eq!(spec.seed(3), 43);
        let explicit = ExperimentSpec {
            replications: 2,
            seeds: Some(vec![7, 9]),
            ..Default::default()
        };
        assert_eq!(explicit.seed(1), 9);
    }

    #[test]
    fn spec_validation() {
        assert!(ExperimentSpec::default().validate().is_ok());
        let bad = ExperimentSpec {
            replications: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec {
            populations: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn blob_hash_matches_git_convention() {
        // sha256 of b"blob 5\0hello"
        assert_eq!(
            content_hash(b"hello"),
            "8aec4e4876f854f688d0ebfc8f37598f38e5fd6903cccc850ca36591175aeb60"
        );
    }
}
