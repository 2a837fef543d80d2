//! Fixed-tick evacuation simulation.
//!
//! Evacuees are the payload ("dumb") packets of the network: they queue at
//! nodes, are released at most `capacity` per tick, walk edges at their
//! class speed and pick their next hop from whichever routing mode the run
//! uses. Fire exposure drains health; the run ends when nobody is left
//! inside or the time cap is reached.

pub mod queue;

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpn::{CpnConfig, CpnDiagnostics, CpnEngine, SpContext};
use crate::graph::{shortest_path, shortest_path_known, BuildingGraph, NodeId};
use crate::hazard::{HazardState, SensorField, SensorReading};
use crate::qos::{ClassName, EvacueeClass, GoalClass, QosParams};
use crate::scenario::Scenario;

pub use queue::NodeQueueStats;

pub const DEFAULT_DT: f64 = 0.5;
pub const DEFAULT_TIME_CAP: f64 = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoutingMode {
    #[serde(rename = "dijkstra")]
    Dijkstra,
    #[serde(rename = "cpn-sp")]
    CpnDistance,
    #[serde(rename = "cpn-st")]
    CpnTime,
    #[serde(rename = "cpn-energy")]
    CpnEnergy,
    #[serde(rename = "cpn-safety")]
    CpnSafety,
}

impl RoutingMode {
    pub const ALL: [RoutingMode; 5] = [
        RoutingMode::Dijkstra,
        RoutingMode::CpnDistance,
        RoutingMode::CpnTime,
        RoutingMode::CpnEnergy,
        RoutingMode::CpnSafety,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RoutingMode::Dijkstra => "dijkstra",
            RoutingMode::CpnDistance => "cpn-sp",
            RoutingMode::CpnTime => "cpn-st",
            RoutingMode::CpnEnergy => "cpn-energy",
            RoutingMode::CpnSafety => "cpn-safety",
        }
    }

    /// Goal the packet network optimizes; `None` for the Dijkstra baseline.
    pub fn goal(self) -> Option<GoalClass> {
        match self {
            RoutingMode::Dijkstra => None,
            RoutingMode::CpnDistance => Some(GoalClass::Distance),
            RoutingMode::CpnTime => Some(GoalClass::Time),
            RoutingMode::CpnEnergy => Some(GoalClass::Energy),
            RoutingMode::CpnSafety => Some(GoalClass::Safety),
        }
    }
}

impl std::fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RoutingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoutingMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown routing mode `{s}` (expected dijkstra, cpn-sp, cpn-st, cpn-energy or cpn-safety)"))
    }
}

/// Route-switching damping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationPolicy {
    /// Nodes to traverse before a new suggestion may be accepted.
    pub movement_depth: u32,
    /// Probability of adopting a different suggestion once eligible.
    pub switch_prob: f64,
    /// Seconds between checks of cached routes against the fire.
    pub hazard_check_period: f64,
}

impl Default for OscillationPolicy {
    fn default() -> Self {
        OscillationPolicy {
            movement_depth: 3,
            switch_prob: 0.8,
            hazard_check_period: 5.0,
        }
    }
}

impl OscillationPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.movement_depth < 1 {
            return Err("movement depth must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return Err("switch probability must lie in [0, 1]".into());
        }
        if !(self.hazard_check_period > 0.0) {
            return Err("hazard check period must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub population: usize,
    pub mode: RoutingMode,
    pub policy: OscillationPolicy,
    pub seed: u64,
    pub dt: f64,
    pub time_cap: f64,
    pub cpn: CpnConfig,
    /// Seconds between smart-packet batches from occupied nodes.
    pub sp_refresh_period: f64,
    /// Smart packets sent from every non-exit node before the evacuation starts.
    pub warmup_packets: usize,
    /// Routes not refreshed for this long are ignored.
    pub route_ttl: f64,
    pub rate_window: f64,
    /// Health lost per intensity unit per second.
    pub exposure_factor: f64,
    pub qos: QosParams,
    pub hazard_enabled: bool,
    pub record_events: bool,
    /// Evacuee class; defaults to the scenario class whose goal matches the mode.
    pub class: Option<ClassName>,
    /// Fixed start nodes, one per evacuee, instead of random placement.
    pub placement: Option<Vec<NodeId>>,
}

impl SimConfig {
    pub fn new(population: usize, mode: RoutingMode, seed: u64) -> Self {
        SimConfig {
            population,
            mode,
            policy: OscillationPolicy::default(),
            seed,
            dt: DEFAULT_DT,
            time_cap: DEFAULT_TIME_CAP,
            cpn: CpnConfig::default(),
            sp_refresh_period: 5.0,
            warmup_packets: 100,
            route_ttl: 30.0,
            rate_window: queue::DEFAULT_RATE_WINDOW,
            exposure_factor: 1.0,
            qos: QosParams::default(),
            hazard_enabled: true,
            record_events: false,
            class: None,
            placement: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvacueeState {
    Moving,
    Queued,
    Exited,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Node(NodeId),
    Edge {
        edge: usize,
        from: NodeId,
        to: NodeId,
        remaining_cm: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evacuee {
    pub id: usize,
    pub location: Location,
    pub health: f64,
    /// Remaining route, starting at the current node (or the node being walked to).
    pub current_path: Vec<NodeId>,
    pub hops_since_replan: u32,
    pub path_valid: bool,
    pub state: EvacueeState,
    pub egress_time: Option<f64>,
    pub exit: Option<NodeId>,
}

impl Evacuee {
    /// The node the evacuee stands at or is walking to.
    pub fn anchor(&self) -> NodeId {
        match self.location {
            Location::Node(n) => n,
            Location::Edge { to, .. } => to,
        }
    }
}

/// True while no node still ahead on the cached route has been reached by the fire.
pub fn hazard_check(evacuee: &Evacuee, hazard: &HazardState, t: f64) -> bool {
    evacuee
        .current_path
        .iter()
        .skip(1)
        .all(|&n| hazard.intensity(n, t) <= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Spawn,
    Arrive,
    Congestion,
    Depart,
    Exit,
    Death,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Spawn => "spawn",
            EventKind::Arrive => "arrive",
            EventKind::Congestion => "congestion",
            EventKind::Depart => "depart",
            EventKind::Exit => "exit",
            EventKind::Death => "death",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub evacuee: usize,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mode: RoutingMode,
    pub population: usize,
    pub seed: u64,
    pub survivors: usize,
    pub dead: usize,
    /// Still inside when the time cap hit.
    pub stranded: usize,
    pub egress_times: Vec<Option<f64>>,
    pub congestion_events: u64,
    /// Traversal count per edge index.
    pub edge_visits: Vec<u64>,
    pub max_queue: Vec<usize>,
    /// Exited evacuees per exit node, ascending by node id.
    pub exit_counts: Vec<(NodeId, usize)>,
    pub final_time: f64,
    pub cpn: CpnDiagnostics,
    pub conservation_violations: u64,
    /// Voluntary adoptions of a different route.
    pub route_switches: u64,
    /// Replans triggered by an invalidated or missing route.
    pub forced_replans: u64,
    pub events: Vec<Event>,
}

impl SimResult {
    /// Fraction of exited evacuees per exit; empty when nobody got out.
    pub fn exit_shares(&self) -> Vec<(NodeId, f64)> {
        let total: usize = self.exit_counts.iter().map(|&(_, c)| c).sum();
        if total == 0 {
            return Vec::new();
        }
        self.exit_counts
            .iter()
            .map(|&(n, c)| (n, c as f64 / total as f64))
            .collect()
    }

    /// Mean egress time of survivors.
    pub fn mean_egress_time(&self) -> Option<f64> {
        let times: Vec<f64> = self.egress_times.iter().flatten().copied().collect();
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }

    pub fn last_egress_time(&self) -> Option<f64> {
        self.egress_times.iter().flatten().copied().reduce(f64::max)
    }

    /// Canonical CSV rendering of everything but the event log.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "key,value");
        let _ = writeln!(out, "mode,{}", self.mode);
        let _ = writeln!(out, "population,{}", self.population);
        let _ = writeln!(out, "seed,{}", self.seed);
        let _ = writeln!(out, "survivors,{}", self.survivors);
        let _ = writeln!(out, "dead,{}", self.dead);
        let _ = writeln!(out, "stranded,{}", self.stranded);
        let _ = writeln!(out, "congestion_events,{}", self.congestion_events);
        let _ = writeln!(out, "final_time,{}", self.final_time);
        let _ = writeln!(out, "sp_launched,{}", self.cpn.sp_launched);
        let _ = writeln!(out, "sp_delivered,{}", self.cpn.sp_delivered);
        let _ = writeln!(out, "sp_dropped,{}", self.cpn.sp_dropped);
        let _ = writeln!(out, "acks_applied,{}", self.cpn.acks_applied);
        let _ = writeln!(out, "route_switches,{}", self.route_switches);
        let _ = writeln!(out, "forced_replans,{}", self.forced_replans);
        for (i, t) in self.egress_times.iter().enumerate() {
            match t {
                Some(t) => writeln!(out, "egress_{i},{t}"),
                None => writeln!(out, "egress_{i},"),
            }
            .ok();
        }
        for (k, v) in self.edge_visits.iter().enumerate() {
            let _ = writeln!(out, "edge_{k},{v}");
        }
        for (k, v) in self.max_queue.iter().enumerate() {
            let _ = writeln!(out, "max_queue_{k},{v}");
        }
        for (n, c) in &self.exit_counts {
            let _ = writeln!(out, "exit_{n},{c}");
        }
        out
    }

    /// One `t,event_type,evacuee,node` line per event.
    pub fn event_log_csv(&self) -> String {
        let mut out = String::from("t,event_type,evacuee,node\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.t, e.kind.label(), e.evacuee, e.node);
        }
        out
    }
}

struct Sensors<'a> {
    stats: &'a [NodeQueueStats],
    hazard: &'a HazardState,
    t: f64,
}

impl SensorField for Sensors<'_> {
    fn read(&self, node: NodeId) -> SensorReading {
        let s = &self.stats[node.index()];
        SensorReading {
            node,
            queue_length: s.len() as u32,
            arrival_rate: s.arrival_rate(self.t),
            departure_rate: s.departure_rate(self.t),
            hazard_intensity: self.hazard.intensity(node, self.t),
        }
    }
}

/// Evacuee class used for a run.
pub fn class_for(scenario: &Scenario, mode: RoutingMode, explicit: Option<ClassName>) -> EvacueeClass {
    if let Some(name) = explicit {
        if let Some(c) = scenario.classes.iter().find(|c| c.name == name) {
            return c.clone();
        }
    }
    let by_goal = mode.goal().and_then(|g| scenario.classes.iter().find(|c| c.goal == g));
    let normal = scenario.classes.iter().find(|c| c.name == ClassName::Normal);
    by_goal
        .or(normal)
        .or(scenario.classes.first())
        .cloned()
        .unwrap_or_else(EvacueeClass::normal)
}

pub struct Simulation<'a> {
    graph: &'a BuildingGraph,
    hazard: HazardState,
    class: EvacueeClass,
    config: SimConfig,
    t: f64,
    tick: u64,
    evacuees: Vec<Evacuee>,
    queues: Vec<NodeQueueStats>,
    cpn: Option<CpnEngine>,
    route_rng: ChaCha8Rng,
    sp_rng: ChaCha8Rng,
    next_refresh: f64,
    next_hazard_check: f64,
    on_demand_tick: Vec<Option<u64>>,
    congestion_events: u64,
    edge_visits: Vec<u64>,
    exit_counts: Vec<usize>,
    conservation_violations: u64,
    route_switches: u64,
    forced_replans: u64,
    events: Vec<Event>,
}

/// Runs one replication with default tuning.
pub fn run(scenario: &Scenario, mode: RoutingMode, policy: OscillationPolicy, population: usize, seed: u64) -> SimResult {
    let mut cfg = SimConfig::new(population, mode, seed);
    cfg.policy = policy;
    Simulation::new(scenario, cfg).run()
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, config: SimConfig) -> Self {
        let graph = &scenario.graph;
        let hazard = match (&scenario.hazard, config.hazard_enabled) {
            (Some(h), true) => HazardState::new(graph, h).expect("scenario hazard was validated on load"),
            _ => HazardState::none(graph),
        };
        let class = class_for(scenario, config.mode, config.class);
        let cpn = config.mode.goal().map(|_| CpnEngine::new(graph, config.cpn));
        let mut place_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut route_rng = ChaCha8Rng::seed_from_u64(config.seed);
        route_rng.set_stream(1);
        let mut sp_rng = ChaCha8Rng::seed_from_u64(config.seed);
        sp_rng.set_stream(2);

        let starts: Vec<NodeId> = match &config.placement {
            Some(p) => p.clone(),
            None => {
                let candidates: Vec<NodeId> = graph
                    .nodes()
                    .iter()
                    .filter(|n| !n.is_exit && Some(n.id) != hazard.source())
                    .map(|n| n.id)
                    .collect();
                (0..config.population)
                    .map(|_| *candidates.choose(&mut place_rng).expect("graph has non-exit nodes"))
                    .collect()
            }
        };

        let mut queues = vec![NodeQueueStats::new(config.rate_window); graph.node_count()];
        let mut events = Vec::new();
        let evacuees = starts
            .iter()
            .enumerate()
            .map(|(id, &n)| {
                queues[n.index()].place(id);
                if config.record_events {
                    events.push(Event {
                        t: 0.0,
                        kind: EventKind::Spawn,
                        evacuee: id,
                        node: n,
                    });
                }
                Evacuee {
                    id,
                    location: Location::Node(n),
                    health: class.health,
                    current_path: Vec::new(),
                    hops_since_replan: 0,
                    path_valid: true,
                    state: EvacueeState::Queued,
                    egress_time: None,
                    exit: None,
                }
            })
            .collect();

        let mut sim = Simulation {
            graph,
            hazard,
            class,
            t: 0.0,
            tick: 0,
            evacuees,
            queues,
            cpn,
            route_rng,
            sp_rng,
            next_refresh: 0.0,
            next_hazard_check: 0.0,
            on_demand_tick: vec![None; graph.node_count()],
            congestion_events: 0,
            edge_visits: vec![0; graph.edge_count()],
            exit_counts: vec![0; graph.node_count()],
            conservation_violations: 0,
            route_switches: 0,
            forced_replans: 0,
            events,
            config,
        };
        sim.warm_up();
        sim
    }

    /// Trains the packet network on the building as it is at time zero.
    fn warm_up(&mut self) {
        if self.cpn.is_none() || self.config.warmup_packets == 0 {
            return;
        }
        let batch = self.config.cpn.batch_size;
        self.config.cpn.batch_size = self.config.warmup_packets;
        let origins: Vec<NodeId> = self.graph.nodes().iter().filter(|n| !n.is_exit).map(|n| n.id).collect();
        for o in origins {
            self.launch(o);
        }
        self.config.cpn.batch_size = batch;
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn evacuees(&self) -> &[Evacuee] {
        &self.evacuees
    }

    pub fn hazard(&self) -> &HazardState {
        &self.hazard
    }

    pub fn class(&self) -> &EvacueeClass {
        &self.class
    }

    pub fn cpn(&self) -> Option<&CpnEngine> {
        self.cpn.as_ref()
    }

    pub fn queue(&self, node: NodeId) -> &NodeQueueStats {
        &self.queues[node.index()]
    }

    /// Current sensor reading at `node`.
    pub fn sensor_read(&self, node: NodeId) -> SensorReading {
        Sensors {
            stats: &self.queues,
            hazard: &self.hazard,
            t: self.t,
        }
        .read(node)
    }

    /// Counts of (moving, queued, exited, dead).
    pub fn census(&self) -> (usize, usize, usize, usize) {
        let mut c = (0, 0, 0, 0);
        for e in &self.evacuees {
            match e.state {
                EvacueeState::Moving => c.0 += 1,
                EvacueeState::Queued => c.1 += 1,
                EvacueeState::Exited => c.2 += 1,
                EvacueeState::Dead => c.3 += 1,
            }
        }
        c
    }

    pub fn finished(&self) -> bool {
        self.evacuees
            .iter()
            .all(|e| matches!(e.state, EvacueeState::Exited | EvacueeState::Dead))
    }

    pub fn run(mut self) -> SimResult {
        while !self.finished() && self.t < self.config.time_cap {
            self.step();
        }
        self.into_result()
    }

    fn log(&mut self, kind: EventKind, evacuee: usize, node: NodeId) {
        if self.config.record_events {
            self.events.push(Event {
                t: self.t,
                kind,
                evacuee,
                node,
            });
        }
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        for q in &mut self.queues {
            q.prune(self.t);
        }
        if self.cpn.is_some() && self.t >= self.next_refresh {
            self.refresh_routes();
            self.next_refresh += self.config.sp_refresh_period;
        }
        if self.t >= self.next_hazard_check {
            for e in &mut self.evacuees {
                if matches!(e.state, EvacueeState::Moving | EvacueeState::Queued) && e.path_valid {
                    e.path_valid = hazard_check(e, &self.hazard, self.t);
                }
            }
            self.next_hazard_check += self.config.policy.hazard_check_period;
        }
        self.serve_nodes();
        self.move_evacuees();
        self.apply_hazard();

        let (m, q, x, d) = self.census();
        if m + q + x + d != self.evacuees.len() {
            self.conservation_violations += 1;
        }
        let queued: usize = self.queues.iter().map(|s| s.len()).sum();
        if queued != q {
            self.conservation_violations += 1;
        }
        self.tick += 1;
        self.t = self.tick as f64 * self.config.dt;
    }

    fn refresh_routes(&mut self) {
        let cutoff = self.t - self.config.route_ttl;
        let origins: Vec<NodeId> = self
            .graph
            .nodes()
            .iter()
            .filter(|n| !n.is_exit && !self.queues[n.id.index()].is_empty())
            .map(|n| n.id)
            .collect();
        if let Some(engine) = self.cpn.as_mut() {
            engine.expire(cutoff);
        }
        for origin in origins {
            self.launch(origin);
        }
    }

    fn launch(&mut self, origin: NodeId) {
        let goal = self.config.mode.goal().expect("packet-network mode");
        let batch = self.config.cpn.batch_size;
        let Simulation {
            graph,
            hazard,
            class,
            config,
            t,
            queues,
            cpn,
            sp_rng,
            ..
        } = self;
        let sensors = Sensors {
            stats: queues,
            hazard,
            t: *t,
        };
        let ctx = SpContext {
            graph,
            hazard,
            class,
            params: QosParams {
                penalty: *hazard.penalty(),
                ..config.qos
            },
            sensors: &sensors,
            t: *t,
        };
        if let Some(engine) = cpn.as_mut() {
            engine.launch_smart_packets(origin, goal, batch, &ctx, sp_rng);
        }
    }

    fn path_is_clear(&self, path: &[NodeId]) -> bool {
        path.iter().skip(1).all(|&n| self.hazard.intensity(n, self.t) <= 0.0)
    }

    /// Top fresh route at `node`; with `clear`, the top one the fire has not reached.
    fn cpn_suggestion(&mut self, node: NodeId, clear: bool) -> Option<Vec<NodeId>> {
        let goal = self.config.mode.goal()?;
        let cutoff = self.t - self.config.route_ttl;
        let pick = |sim: &Self| -> Option<Vec<NodeId>> {
            sim.cpn
                .as_ref()?
                .routes(node, goal)
                .iter()
                .find(|e| e.timestamp >= cutoff && (!clear || sim.path_is_clear(&e.path)))
                .map(|e| e.path.clone())
        };
        if let Some(p) = pick(self) {
            return Some(p);
        }
        if self.on_demand_tick[node.index()] != Some(self.tick) {
            self.on_demand_tick[node.index()] = Some(self.tick);
            self.launch(node);
            return pick(self);
        }
        None
    }

    fn suggestion(&mut self, node: NodeId, forced: bool) -> Option<Vec<NodeId>> {
        match self.config.mode {
            RoutingMode::Dijkstra => {
                let p = shortest_path(self.graph, node, &self.hazard, self.t).ok()?;
                (!p.is_empty()).then_some(p.nodes)
            }
            _ => self.cpn_suggestion(node, forced),
        }
    }

    /// Dijkstra over what the node itself and its neighbours sense.
    fn local_fallback(&self, node: NodeId) -> Option<Vec<NodeId>> {
        let near: Vec<NodeId> = std::iter::once(node)
            .chain(self.graph.neighbours(node).iter().map(|&(n, _)| n))
            .collect();
        let p = shortest_path_known(self.graph, node, self.hazard.penalty(), |n| {
            if near.contains(&n) {
                self.hazard.intensity(n, self.t)
            } else {
                0.0
            }
        })
        .ok()?;
        (!p.is_empty()).then_some(p.nodes)
    }

    /// Decides the next hop of an evacuee about to leave `node`.
    fn maybe_replan(&mut self, who: usize, node: NodeId) -> Option<NodeId> {
        let e = &self.evacuees[who];
        let cached_ok = e.current_path.len() >= 2 && e.current_path[0] == node;
        let forced = !cached_ok || !e.path_valid;
        let due = e.hops_since_replan >= self.config.policy.movement_depth;
        if !forced && !due {
            return Some(e.current_path[1]);
        }
        if forced {
            self.forced_replans += 1;
        }
        let adopt = match self.suggestion(node, forced) {
            Some(route) if route.len() >= 2 => {
                let same = route == self.evacuees[who].current_path;
                if forced || same {
                    Some(route)
                } else if self.route_rng.gen::<f64>() < self.config.policy.switch_prob {
                    self.route_switches += 1;
                    Some(route)
                } else {
                    None
                }
            }
            _ if forced => self.local_fallback(node).filter(|r| r.len() >= 2),
            _ => None,
        };
        let e = &mut self.evacuees[who];
        if let Some(route) = adopt {
            e.current_path = route;
            e.hops_since_replan = 0;
            e.path_valid = true;
        } else if forced {
            e.current_path.clear();
            return None;
        }
        Some(e.current_path[1])
    }

    fn serve_nodes(&mut self) {
        for idx in 0..self.graph.node_count() {
            let node = NodeId(idx as u32);
            if self.queues[idx].is_empty() {
                continue;
            }
            let capacity = self.graph.nodes()[idx].capacity as usize;
            let waiting: Vec<usize> = self.queues[idx].occupants().collect();
            let is_exit = self.graph.is_exit(node);
            let mut released = 0;
            for who in waiting {
                if released == capacity {
                    break;
                }
                if is_exit {
                    self.queues[idx].depart(who, self.t);
                    let e = &mut self.evacuees[who];
                    e.state = EvacueeState::Exited;
                    e.egress_time = Some(self.t);
                    e.exit = Some(node);
                    self.exit_counts[idx] += 1;
                    self.log(EventKind::Exit, who, node);
                    released += 1;
                    continue;
                }
                let Some(next) = self.maybe_replan(who, node) else {
                    continue;
                };
                let edge = self.graph.edge_between(node, next).expect("routes follow graph edges");
                self.queues[idx].depart(who, self.t);
                self.edge_visits[edge] += 1;
                let e = &mut self.evacuees[who];
                e.current_path.remove(0);
                e.location = Location::Edge {
                    edge,
                    from: node,
                    to: next,
                    remaining_cm: self.graph.edge(edge).length_cm,
                };
                e.state = EvacueeState::Moving;
                self.log(EventKind::Depart, who, node);
                released += 1;
            }
        }
    }

    fn move_evacuees(&mut self) {
        let step = self.class.speed_cm_s * self.config.dt;
        for who in 0..self.evacuees.len() {
            let e = &mut self.evacuees[who];
            let Location::Edge {
                to, ref mut remaining_cm, ..
            } = e.location
            else {
                continue;
            };
            if e.state != EvacueeState::Moving {
                continue;
            }
            *remaining_cm -= step;
            if *remaining_cm > 0.0 {
                continue;
            }
            e.location = Location::Node(to);
            e.state = EvacueeState::Queued;
            e.hops_since_replan += 1;
            let found = self.queues[to.index()].arrive(who, self.t);
            self.log(EventKind::Arrive, who, to);
            if found > 0 {
                self.congestion_events += 1;
                self.log(EventKind::Congestion, who, to);
            }
        }
    }

    fn apply_hazard(&mut self) {
        let dt = self.config.dt;
        for who in 0..self.evacuees.len() {
            let e = &self.evacuees[who];
            if !matches!(e.state, EvacueeState::Moving | EvacueeState::Queued) {
                continue;
            }
            let at = match e.location {
                Location::Node(n) => n,
                Location::Edge {
                    edge,
                    from,
                    to,
                    remaining_cm,
                } => {
                    if remaining_cm <= self.graph.edge(edge).length_cm / 2.0 {
                        to
                    } else {
                        from
                    }
                }
            };
            let dose = self.hazard.intensity(at, self.t) * dt * self.config.exposure_factor;
            if dose <= 0.0 {
                continue;
            }
            let e = &mut self.evacuees[who];
            e.health -= dose;
            if e.health <= 0.0 {
                if e.state == EvacueeState::Queued {
                    self.queues[at.index()].remove(who);
                }
                e.state = EvacueeState::Dead;
                self.log(EventKind::Death, who, at);
            }
        }
    }

    pub fn into_result(self) -> SimResult {
        let (_, _, exited, dead) = self.census();
        let stranded = self.evacuees.len() - exited - dead;
        SimResult {
            mode: self.config.mode,
            population: self.evacuees.len(),
            seed: self.config.seed,
            survivors: exited,
            dead,
            stranded,
            egress_times: self.evacuees.iter().map(|e| e.egress_time).collect(),
            congestion_events: self.congestion_events,
            edge_visits: self.edge_visits,
            max_queue: self.queues.iter().map(|q| q.max_queue).collect(),
            exit_counts: self
                .graph
                .exits()
                .map(|n| (n, self.exit_counts[n.index()]))
                .collect(),
            final_time: self.t,
            cpn: self.cpn.as_ref().map(|c| c.diagnostics()).unwrap_or_default(),
            conservation_violations: self.conservation_violations,
            route_switches: self.route_switches,
            forced_replans: self.forced_replans,
            events: self.events,
        }
    }
}
