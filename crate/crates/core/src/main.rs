use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cpn_evac::experiment::{run_experiment, write_outputs, ExperimentSpec};
use cpn_evac::scenario::{load_scenario, DEMO_SCENARIO};
use cpn_evac::sim::{OscillationPolicy, RoutingMode};

/// Replicated evacuation experiments over a building scenario.
#[derive(Debug, Parser)]
#[command(name = "cpn-evac", version)]
struct Cli {
    /// Scenario JSON file; the bundled three-floor building when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,

    #[arg(long, value_delimiter = ',', default_value = "dijkstra,cpn-sp,cpn-st")]
    modes: Vec<RoutingMode>,

    #[arg(long, value_delimiter = ',', default_value = "30,60,90,120")]
    populations: Vec<usize>,

    #[arg(long, default_value_t = 10)]
    replications: usize,

    /// Base seed; replication i runs with seed + i.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long, default_value_t = OscillationPolicy::default().movement_depth)]
    movement_depth: u32,

    #[arg(long, default_value_t = OscillationPolicy::default().switch_prob)]
    switch_prob: f64,

    /// Inclusive depth range for the movement-depth sweep, e.g. `1..10`.
    #[arg(long, value_parser = parse_depths)]
    sweep_depth: Option<DepthRange>,

    /// Population used by the movement-depth sweep.
    #[arg(long, default_value_t = 120)]
    sweep_population: usize,

    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Also write one event log per run under `<out>/events/`.
    #[arg(long)]
    event_log: bool,
}

#[derive(Debug, Clone)]
struct DepthRange(Vec<u32>);

fn parse_depths(s: &str) -> Result<DepthRange, String> {
    let (lo, hi) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .ok_or_else(|| format!("expected a range like 1..10, got `{s}`"))?;
    let lo: u32 = lo.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let hi: u32 = hi.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if lo < 1 || hi < lo {
        return Err(format!("range {lo}..{hi} must satisfy 1 <= start <= end"));
    }
    Ok(DepthRange((lo..=hi).collect()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match &cli.scenario {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", p.display());
                return ExitCode::FAILURE;
            }
        },
        None => DEMO_SCENARIO.to_string(),
    };
    let scenario = match load_scenario(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: invalid scenario: {e}");
            return ExitCode::FAILURE;
        }
    };
    let policy = OscillationPolicy {
        movement_depth: cli.movement_depth,
        switch_prob: cli.switch_prob,
        ..OscillationPolicy::default()
    };
    let spec = ExperimentSpec {
        scenario: cli.scenario.clone(),
        populations: cli.populations,
        modes: cli.modes,
        replications: cli.replications,
        base_seed: cli.seed,
        policy,
        sweep_depths: cli.sweep_depth.map(|d| d.0).unwrap_or_default(),
        sweep_population: cli.sweep_population,
        record_events: cli.event_log,
        ..ExperimentSpec::default()
    };
    let out = match run_experiment(&scenario, &spec) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match write_outputs(&cli.out, &scenario, text.as_bytes(), &spec, &out) {
        Ok(warnings) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
        }
        Err(e) => {
            eprintln!("error: writing {}: {e}", cli.out.display());
            return ExitCode::FAILURE;
        }
    }
    println!("population,mode,survivors_mean,evacuation_time_mean,congestion_mean");
    for s in &out.summary {
        println!(
            "{},{},{:.2},{:.1},{:.1}",
            s.population, s.mode, s.survivors.mean, s.evacuation_time.mean, s.congestion.mean
        );
    }
    if let Some(best) = out.depth_sweep.iter().find(|d| d.is_argmax) {
        println!("movement depth with most survivors: {}", best.depth);
    }
    ExitCode::SUCCESS
}
