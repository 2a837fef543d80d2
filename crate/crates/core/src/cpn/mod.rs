//! Cognitive packet routing fabric.
//!
//! Smart packets walk from an origin towards any exit, steered at each node
//! by that node's random neural network (or a random drift). A packet that
//! reaches an exit turns into an acknowledgement that retraces the
//! loop-free reverse path; every node it passes records its own suffix of
//! the route in a goal-ordered routing list and rewards the neuron of the
//! next hop it took. Evacuees then read the top of those lists.

mod rnn;
mod routing;

pub use rnn::{sp_next_hop, sp_next_hop_among, RnnState, DEFAULT_SMOOTHING, INITIAL_WEIGHT};
pub use routing::{Offer, RouteEntry, RoutingList, DEFAULT_CAPACITY};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{BuildingGraph, NodeId};
use crate::hazard::{HazardState, SensorField, SensorReading};
use crate::qos::{self, EvacueeClass, GoalClass, Observation, QosParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CpnError {
    #[error("node {0} has no neighbours")]
    IsolatedNode(NodeId),
    #[error("{0} is not a neighbour")]
    NotANeighbour(NodeId),
    #[error("reward must be positive and finite, got {0}")]
    InvalidReward(f64),
    #[error("ack does not pass through node {0}")]
    MalformedAck(NodeId),
    #[error("no route known at node {0}")]
    NoRoute(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpnConfig {
    pub drift_prob: f64,
    /// Hop budget as a multiple of the node count.
    pub hop_budget_factor: usize,
    pub list_capacity: usize,
    pub batch_size: usize,
    pub smoothing: f64,
}

impl Default for CpnConfig {
    fn default() -> Self {
        CpnConfig {
            drift_prob: 0.05,
            hop_budget_factor: 4,
            list_capacity: DEFAULT_CAPACITY,
            batch_size: 20,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmartPacket {
    pub origin: NodeId,
    pub goal: GoalClass,
    pub visited: Vec<NodeId>,
    pub measurements: Vec<SensorReading>,
    pub hop_budget: usize,
}

impl SmartPacket {
    pub fn hops(&self) -> usize {
        self.visited.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ack {
    pub goal: GoalClass,
    /// Loop-free, exit first, origin last.
    pub reverse_path: Vec<NodeId>,
    /// Reading taken at each node of `reverse_path`.
    pub collected: Vec<SensorReading>,
    /// Goal value of the route from each node of `reverse_path` to the exit.
    pub suffix_values: Vec<f64>,
    pub timestamp: f64,
}

impl Ack {
    /// The route from `node` to the exit, with its goal value.
    pub fn suffix_from(&self, node: NodeId) -> Option<(Vec<NodeId>, f64)> {
        let pos = self.reverse_path.iter().position(|&n| n == node)?;
        let path = self.reverse_path[..=pos].iter().rev().copied().collect();
        Some((path, self.suffix_values[pos]))
    }
}

/// Cuts cycles out of a walk. Scanning from the far end (the direction an
/// acknowledgement travels), each kept node is followed by whatever
/// preceded its first visit, so the longest loop through any node goes.
pub fn remove_loops(path: &[NodeId]) -> Vec<NodeId> {
    if path.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(path.len());
    let mut i = path.len() - 1;
    loop {
        let node = path[i];
        out.push(node);
        let first = path.iter().position(|&n| n == node).expect("node is in path");
        if first == 0 {
            break;
        }
        i = first - 1;
    }
    out.reverse();
    out
}

#[derive(Debug, Clone, PartialEq)]
struct Brain {
    rnn: RnnState,
    routes: RoutingList,
}

/// Per-node routing state, one brain per goal class.
#[derive(Debug, Clone, PartialEq)]
pub struct CpnNodeState {
    node: NodeId,
    neighbours: Vec<NodeId>,
    list_capacity: usize,
    brains: [Option<Brain>; 4],
}

impl CpnNodeState {
    pub fn new(node: NodeId, neighbours: Vec<NodeId>, list_capacity: usize) -> Self {
        CpnNodeState {
            node,
            neighbours,
            list_capacity,
            brains: Default::default(),
        }
    }

    fn brain_mut(&mut self, goal: GoalClass) -> &mut Brain {
        let (neighbours, cap) = (&self.neighbours, self.list_capacity);
        self.brains[goal.index()].get_or_insert_with(|| Brain {
            rnn: RnnState::new(neighbours.clone()),
            routes: RoutingList::new(cap),
        })
    }

    pub fn rnn(&self, goal: GoalClass) -> Option<&RnnState> {
        self.brains[goal.index()].as_ref().map(|b| &b.rnn)
    }

    pub fn routing_list(&self, goal: GoalClass) -> Option<&RoutingList> {
        self.brains[goal.index()].as_ref().map(|b| &b.routes)
    }

    /// Records the ack's route from this node and rewards the next hop it took.
    pub fn process_ack(&mut self, ack: &Ack, smoothing: f64) -> Result<Offer, CpnError> {
        let node = self.node;
        let (path, value) = ack.suffix_from(node).ok_or(CpnError::MalformedAck(node))?;
        if path.len() < 2 {
            // the exit itself keeps no routes
            return Ok(Offer::Rejected);
        }
        let brain = self.brain_mut(ack.goal);
        let offer = brain.routes.offer(&path, value, ack.timestamp);
        brain.rnn.reinforce(path[1], 1.0 / value, smoothing)?;
        Ok(offer)
    }

    /// Top route for `goal`.
    pub fn best_route(&self, goal: GoalClass) -> Result<&RouteEntry, CpnError> {
        self.routing_list(goal)
            .and_then(|l| l.best())
            .ok_or(CpnError::NoRoute(self.node))
    }

    pub fn expire(&mut self, cutoff: f64) {
        for b in self.brains.iter_mut().flatten() {
            b.routes.expire(cutoff);
        }
    }
}

/// What smart packets need to know about the world they explore.
pub struct SpContext<'a> {
    pub graph: &'a BuildingGraph,
    pub hazard: &'a HazardState,
    pub class: &'a EvacueeClass,
    pub params: QosParams,
    pub sensors: &'a dyn SensorField,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CpnDiagnostics {
    pub sp_launched: u64,
    pub sp_delivered: u64,
    pub sp_dropped: u64,
    pub acks_applied: u64,
}

#[derive(Debug, Clone)]
pub struct CpnEngine {
    config: CpnConfig,
    hop_budget: usize,
    nodes: Vec<CpnNodeState>,
    diagnostics: CpnDiagnostics,
}

impl CpnEngine {
    pub fn new(graph: &BuildingGraph, config: CpnConfig) -> Self {
        let nodes = graph
            .nodes()
            .iter()
            .map(|n| {
                let neighbours = graph.neighbours(n.id).iter().map(|&(m, _)| m).collect();
                CpnNodeState::new(n.id, neighbours, config.list_capacity)
            })
            .collect();
        CpnEngine {
            config,
            hop_budget: config.hop_budget_factor * graph.node_count(),
            nodes,
            diagnostics: CpnDiagnostics::default(),
        }
    }

    pub fn config(&self) -> &CpnConfig {
        &self.config
    }

    pub fn diagnostics(&self) -> CpnDiagnostics {
        self.diagnostics
    }

    pub fn node_state(&self, node: NodeId) -> &CpnNodeState {
        &self.nodes[node.index()]
    }

    pub fn best_route(&self, node: NodeId, goal: GoalClass) -> Result<&RouteEntry, CpnError> {
        self.nodes[node.index()].best_route(goal)
    }

    pub fn routes(&self, node: NodeId, goal: GoalClass) -> &[RouteEntry] {
        self.nodes[node.index()]
            .routing_list(goal)
            .map_or(&[], |l| l.entries())
    }

    /// Forgets routes not refreshed since `cutoff`.
    pub fn expire(&mut self, cutoff: f64) {
        for n in &mut self.nodes {
            n.expire(cutoff);
        }
    }

    /// Sends `count` smart packets from `origin`, applies the resulting acks
    /// along their reverse paths and returns them.
    pub fn launch_smart_packets<R: Rng + ?Sized>(
        &mut self,
        origin: NodeId,
        goal: GoalClass,
        count: usize,
        ctx: &SpContext<'_>,
        rng: &mut R,
    ) -> Vec<Ack> {
        let mut acks = Vec::new();
        for _ in 0..count {
            self.diagnostics.sp_launched += 1;
            let Some(sp) = self.walk(origin, goal, ctx, rng) else {
                self.diagnostics.sp_dropped += 1;
                continue;
            };
            self.diagnostics.sp_delivered += 1;
            let Some(ack) = build_ack(&sp, ctx) else {
                continue;
            };
            self.apply_ack(&ack);
            acks.push(ack);
        }
        acks
    }

    /// Applies an ack at every non-exit node on its reverse path.
    pub fn apply_ack(&mut self, ack: &Ack) {
        for (k, &node) in ack.reverse_path.iter().enumerate() {
            let v = ack.suffix_values[k];
            if k == 0 || !(v.is_finite() && v > 0.0) {
                continue;
            }
            self.nodes[node.index()]
                .process_ack(ack, self.config.smoothing)
                .expect("node lies on the ack's path");
        }
        self.diagnostics.acks_applied += 1;
    }

    fn walk<R: Rng + ?Sized>(
        &mut self,
        origin: NodeId,
        goal: GoalClass,
        ctx: &SpContext<'_>,
        rng: &mut R,
    ) -> Option<SmartPacket> {
        let penalty = ctx.params.penalty;
        let drift = self.config.drift_prob;
        let mut sp = SmartPacket {
            origin,
            goal,
            visited: vec![origin],
            measurements: vec![ctx.sensors.read(origin)],
            hop_budget: self.hop_budget,
        };
        let mut cur = origin;
        while !ctx.graph.is_exit(cur) {
            if sp.hops() >= sp.hop_budget {
                return None;
            }
            let rnn = &self.nodes[cur.index()].brain_mut(goal).rnn;
            let open = |n: NodeId| !penalty.blocks(ctx.sensors.read(n).hazard_intensity);
            let fresh = |n: NodeId| open(n) && !sp.visited.contains(&n);
            // revisits only when every open neighbour has been seen already
            let next = if rnn.neighbours().iter().any(|&n| fresh(n)) {
                sp_next_hop_among(cur, rnn, drift, rng, fresh)
            } else {
                sp_next_hop_among(cur, rnn, drift, rng, open)
            }
            .ok()?;
            sp.visited.push(next);
            sp.measurements.push(ctx.sensors.read(next));
            cur = next;
        }
        Some(sp)
    }
}

/// Turns a delivered smart packet into an acknowledgement, evaluating the
/// goal of every suffix of its loop-free route.
pub fn build_ack(sp: &SmartPacket, ctx: &SpContext<'_>) -> Option<Ack> {
    let forward = remove_loops(&sp.visited);
    let readings: Vec<SensorReading> = forward
        .iter()
        .map(|n| {
            let i = sp.visited.iter().rposition(|v| v == n).expect("kept nodes were visited");
            sp.measurements[i]
        })
        .collect();
    let m = forward.len();
    let mut suffix_values = vec![0.0; m];
    for k in 0..m.saturating_sub(1) {
        let obs = Observation::new(ctx.graph, &forward[k..], &readings[k..]).ok()?;
        suffix_values[k] = qos::evaluate(sp.goal, &obs, ctx.class, ctx.hazard, &ctx.params, ctx.t)
            .unwrap_or(f64::INFINITY);
    }
    Some(Ack {
        goal: sp.goal,
        reverse_path: forward.iter().rev().copied().collect(),
        collected: readings.into_iter().rev().collect(),
        suffix_values: suffix_values.into_iter().rev().collect(),
        timestamp: ctx.t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_graphs::{edge, node};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn loop_removal_examples() {
        assert_eq!(remove_loops(&p(&[0, 1, 2, 1, 3])), p(&[0, 1, 3]));
        assert_eq!(remove_loops(&p(&[0, 1, 2])), p(&[0, 1, 2]));
        // A,B,A,C,B,D -> A,B,D
        assert_eq!(remove_loops(&p(&[0, 1, 0, 2, 1, 3])), p(&[0, 1, 3]));
        assert_eq!(remove_loops(&p(&[4])), p(&[4]));
        assert_eq!(remove_loops(&p(&[4, 5, 4])), p(&[4]));
    }

    fn is_subsequence(sub: &[NodeId], of: &[NodeId]) -> bool {
        let mut it = of.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    }

    proptest! {
        #[test]
        fn loop_removal_properties(walk in prop::collection::vec(0u32..6, 1..40)) {
            let walk = p(&walk);
            let out = remove_loops(&walk);
            let mut seen = std::collections::HashSet::new();
            prop_assert!(out.iter().all(|n| seen.insert(*n)));
            prop_assert!(is_subsequence(&out, &walk));
            prop_assert_eq!(out.first(), walk.first());
            prop_assert_eq!(out.last(), walk.last());
            prop_assert_eq!(remove_loops(&out), out.clone());
        }
    }

    fn ack(path_exit_first: &[u32], values: &[f64]) -> Ack {
        Ack {
            goal: GoalClass::Distance,
            reverse_path: p(path_exit_first),
            collected: vec![SensorReading::default(); path_exit_first.len()],
            suffix_values: values.to_vec(),
            timestamp: 0.0,
        }
    }

    #[test]
    fn process_ack_inserts_and_orders() {
        let mut s = CpnNodeState::new(NodeId(0), p(&[1, 2]), 5);
        s.process_ack(&ack(&[9, 1, 0], &[0.0, 4.0, 10.0]), DEFAULT_SMOOTHING).unwrap();
        let l = s.routing_list(GoalClass::Distance).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.best().unwrap().goal_value, 10.0);
        assert_eq!(l.best().unwrap().path, p(&[0, 1, 9]));
        s.process_ack(&ack(&[9, 2, 0], &[0.0, 1.0, 5.0]), DEFAULT_SMOOTHING).unwrap();
        assert_eq!(s.best_route(GoalClass::Distance).unwrap().goal_value, 5.0);
        assert!(s.best_route(GoalClass::Time).is_err());
    }

    #[test]
    fn process_ack_full_list_keeps_better_entries() {
        let mut s = CpnNodeState::new(NodeId(0), p(&[1, 2, 3]), 2);
        s.process_ack(&ack(&[9, 1, 0], &[0.0, 1.0, 2.0]), DEFAULT_SMOOTHING).unwrap();
        s.process_ack(&ack(&[9, 2, 0], &[0.0, 1.0, 3.0]), DEFAULT_SMOOTHING).unwrap();
        let before = s.routing_list(GoalClass::Distance).unwrap().clone();
        let o = s.process_ack(&ack(&[9, 3, 0], &[0.0, 1.0, 7.0]), DEFAULT_SMOOTHING).unwrap();
        assert_eq!(o, Offer::Rejected);
        assert_eq!(s.routing_list(GoalClass::Distance).unwrap(), &before);
    }

    #[test]
    fn process_ack_rejects_foreign_node() {
        let mut s = CpnNodeState::new(NodeId(5), p(&[1]), 5);
        assert_eq!(
            s.process_ack(&ack(&[9, 1, 0], &[0.0, 1.0, 2.0]), DEFAULT_SMOOTHING),
            Err(CpnError::MalformedAck(NodeId(5)))
        );
    }

    struct Quiet;
    impl SensorField for Quiet {
        fn read(&self, node: NodeId) -> SensorReading {
            SensorReading {
                node,
                ..Default::default()
            }
        }
    }

    #[test]
    fn smart_packets_fill_routing_lists_along_the_path() {
        // 0 - 1 - 2(exit), plus a detour 0 - 3 - 2
        let g = BuildingGraph::new(
            vec![node(0, 0.0, 0.0, false), node(1, 1.0, 0.0, false), node(2, 2.0, 0.0, true), node(3, 1.0, 1.0, false)],
            vec![edge(0, 1, 100.0), edge(1, 2, 100.0), edge(0, 3, 150.0), edge(3, 2, 150.0)],
        )
        .unwrap();
        let hazard = HazardState::none(&g);
        let class = EvacueeClass::normal();
        let ctx = SpContext {
            graph: &g,
            hazard: &hazard,
            class: &class,
            params: QosParams::default(),
            sensors: &Quiet,
            t: 0.0,
        };
        let mut engine = CpnEngine::new(&g, CpnConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let acks = engine.launch_smart_packets(NodeId(0), GoalClass::Distance, 50, &ctx, &mut rng);
        assert!(!acks.is_empty());
        for a in &acks {
            assert!(g.is_exit(a.reverse_path[0]));
            assert_eq!(*a.reverse_path.last().unwrap(), NodeId(0));
        }
        let best = engine.best_route(NodeId(0), GoalClass::Distance).unwrap();
        assert_eq!(best.path, p(&[0, 1, 2]));
        assert_eq!(best.goal_value, 200.0);
        // intermediate node learned its own suffix
        assert_eq!(engine.best_route(NodeId(1), GoalClass::Distance).unwrap().goal_value, 100.0);
        let d = engine.diagnostics();
        assert_eq!(d.sp_launched, 50);
        assert_eq!(d.sp_delivered + d.sp_dropped, 50);
    }
}
