use std::collections::VecDeque;

use cpn_evac::sim::{EventKind, RoutingMode, SimConfig, SimResult, Simulation};
use cpn_evac::Scenario;
use proptest::prelude::*;

fn run(scenario: &Scenario, mode: RoutingMode, population: usize, seed: u64) -> SimResult {
    let mut cfg = SimConfig::new(population, mode, seed);
    cfg.record_events = true;
    Simulation::new(scenario, cfg).run()
}

struct Replay {
    congestion: u64,
    fifo_breaks: usize,
}

/// Rebuilds every node queue from the event log alone.
fn replay(r: &SimResult, nodes: usize) -> Replay {
    let mut queues = vec![VecDeque::new(); nodes];
    let mut out = Replay {
        congestion: 0,
        fifo_breaks: 0,
    };
    let mut pending_arrival = None;
    for e in &r.events {
        let q = &mut queues[e.node.index()];
        if e.kind == EventKind::Congestion {
            assert_eq!(pending_arrival, Some((e.evacuee, true)), "congestion without a crowded arrival");
            pending_arrival = None;
            continue;
        }
        if let Some((who, crowded)) = pending_arrival.take() {
            assert!(!crowded, "arrival of {who} into a queue was not flagged");
        }
        match e.kind {
            EventKind::Spawn => q.push_back(e.evacuee),
            EventKind::Arrive => {
                let crowded = !q.is_empty();
                out.congestion += u64::from(crowded);
                pending_arrival = Some((e.evacuee, crowded));
                q.push_back(e.evacuee);
            }
            EventKind::Depart | EventKind::Exit => {
                if q.front() != Some(&e.evacuee) {
                    out.fifo_breaks += 1;
                }
                let pos = q.iter().position(|&w| w == e.evacuee).expect("leaves a queue it is in");
                q.remove(pos);
            }
            EventKind::Death => {
                if let Some(pos) = q.iter().position(|&w| w == e.evacuee) {
                    q.remove(pos);
                }
            }
            EventKind::Congestion => unreachable!(),
        }
    }
    if let Some((who, crowded)) = pending_arrival {
        assert!(!crowded, "final arrival of {who} was not flagged");
    }
    out
}

#[test]
fn congestion_count_matches_event_log_replay() {
    let s = Scenario::demo();
    for mode in RoutingMode::ALL {
        for seed in 1..=3 {
            let r = run(&s, mode, 60, seed);
            assert_eq!(replay(&r, s.graph.node_count()).congestion, r.congestion_events, "{mode} seed {seed}");
        }
    }
}

#[test]
fn fire_free_queues_are_first_in_first_out() {
    let s = Scenario::demo().without_hazard();
    for mode in [RoutingMode::Dijkstra, RoutingMode::CpnDistance, RoutingMode::CpnTime] {
        let r = run(&s, mode, 90, 4);
        assert_eq!(r.survivors, 90);
        assert_eq!(replay(&r, s.graph.node_count()).fifo_breaks, 0, "{mode}");
    }
}

#[test]
fn event_log_has_one_terminal_event_per_evacuee() {
    let s = Scenario::demo();
    let r = run(&s, RoutingMode::CpnTime, 120, 9);
    let exits = r.events.iter().filter(|e| e.kind == EventKind::Exit).count();
    let deaths = r.events.iter().filter(|e| e.kind == EventKind::Death).count();
    assert_eq!(exits, r.survivors);
    assert_eq!(deaths, r.dead);
    let header = r.event_log_csv().lines().next().unwrap().to_string();
    assert_eq!(header, "t,event_type,evacuee,node");
}

#[test]
fn edge_visits_count_departures() {
    let s = Scenario::demo();
    let r = run(&s, RoutingMode::Dijkstra, 60, 2);
    let departures = r.events.iter().filter(|e| e.kind == EventKind::Depart).count() as u64;
    assert_eq!(r.edge_visits.iter().sum::<u64>(), departures);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_conserve_population_and_are_reproducible(
        seed in any::<u64>(),
        population in 1usize..80,
        mode in prop::sample::select(RoutingMode::ALL.to_vec()),
    ) {
        let s = Scenario::demo();
        let a = run(&s, mode, population, seed);
        let b = run(&s, mode, population, seed);
        prop_assert_eq!(a.conservation_violations, 0);
        prop_assert_eq!(a.survivors + a.dead + a.stranded, population);
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(a.event_log_csv(), b.event_log_csv());
    }
}
