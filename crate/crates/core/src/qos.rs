//! Goal functions minimized by the packet network.
//!
//! Every function here evaluates one explored path together with the sensor
//! readings collected at each of its nodes (`readings[i]` belongs to
//! `nodes[i]`). Effective edge lengths are derived from the hazard
//! intensities in those readings, so a path is judged on what the packet
//! actually observed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{effective_length, BuildingGraph, GraphError, NodeId};
use crate::hazard::{HazardPenalty, HazardState, SensorReading};

/// Queueing delay charged at a node whose arrival rate is zero but whose
/// predicted queue is positive.
pub const DEFAULT_T_NODE_MAX: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalClass {
    Time,
    Energy,
    Safety,
    Distance,
}

impl GoalClass {
    pub const ALL: [GoalClass; 4] = [GoalClass::Time, GoalClass::Energy, GoalClass::Safety, GoalClass::Distance];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassName {
    Normal,
    Wheelchair,
    Sick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvacueeClass {
    pub name: ClassName,
    pub speed_cm_s: f64,
    pub goal: GoalClass,
    /// Energy per braking (congestion) event.
    #[serde(default)]
    pub c_b: f64,
    /// Energy per centimetre travelled.
    #[serde(default)]
    pub c_s: f64,
    /// Energy per degree turned.
    #[serde(default)]
    pub c_t: f64,
    pub health: f64,
}

impl EvacueeClass {
    pub fn normal() -> Self {
        EvacueeClass {
            name: ClassName::Normal,
            speed_cm_s: 120.0,
            goal: GoalClass::Time,
            c_b: 0.0,
            c_s: 0.0,
            c_t: 0.0,
            health: 100.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.speed_cm_s > 0.0) {
            return Err(format!("class {:?}: speed must be positive", self.name));
        }
        if self.c_b < 0.0 || self.c_s < 0.0 || self.c_t < 0.0 {
            return Err(format!("class {:?}: energy constants must be nonnegative", self.name));
        }
        if !(self.health > 0.0) {
            return Err(format!("class {:?}: health must be positive", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosParams {
    pub penalty: HazardPenalty,
    pub t_node_max: f64,
}

impl Default for QosParams {
    fn default() -> Self {
        QosParams {
            penalty: HazardPenalty::default(),
            t_node_max: DEFAULT_T_NODE_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QosError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{readings} readings for a path of {nodes} nodes")]
    ReadingsMismatch { nodes: usize, readings: usize },
    #[error("empty path")]
    EmptyPath,
}

/// A path plus the per-node readings gathered along it.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub graph: &'a BuildingGraph,
    pub nodes: &'a [NodeId],
    pub readings: &'a [SensorReading],
}

impl<'a> Observation<'a> {
    pub fn new(graph: &'a BuildingGraph, nodes: &'a [NodeId], readings: &'a [SensorReading]) -> Result<Self, QosError> {
        if nodes.is_empty() {
            return Err(QosError::EmptyPath);
        }
        if nodes.len() != readings.len() {
            return Err(QosError::ReadingsMismatch {
                nodes: nodes.len(),
                readings: readings.len(),
            });
        }
        Ok(Observation { graph, nodes, readings })
    }

    fn edge_indices(&self) -> Result<Vec<usize>, QosError> {
        self.nodes
            .windows(2)
            .map(|w| {
                self.graph
                    .edge_between(w[0], w[1])
                    .ok_or(QosError::Graph(GraphError::MissingEdge(w[0], w[1])))
            })
            .collect()
    }

    /// Effective length of every edge, from the observed endpoint intensities.
    pub fn effective_lengths(&self, penalty: &HazardPenalty) -> Result<Vec<f64>, QosError> {
        Ok(self
            .edge_indices()?
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                penalty.apply(
                    self.graph.edge(k).length_cm,
                    self.readings[i].hazard_intensity,
                    self.readings[i + 1].hazard_intensity,
                )
            })
            .collect())
    }
}

/// `K[x]`: zero for negative arguments, identity otherwise.
#[inline]
pub fn positive_part(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CongestionForecast {
    /// Number of nodes where the evacuee is predicted to meet a queue.
    pub congestion_count: u32,
    /// Predicted travel time to the end of the path, seconds.
    pub total_time: f64,
    /// Predicted time to reach each path node (`arrival_times[0] == 0`).
    pub arrival_times: Vec<f64>,
    /// Projected queue `q0 + (λ - μ) T` at each non-final node.
    pub projected_queues: Vec<f64>,
}

/// Walks the path edge by edge, projecting each node's queue forward to the
/// moment the evacuee gets there. A positive projection counts as one
/// congestion event and costs `queue / λ` seconds of waiting.
pub fn predict_congestion(
    obs: &Observation<'_>,
    class: &EvacueeClass,
    params: &QosParams,
) -> Result<CongestionForecast, QosError> {
    let lengths = obs.effective_lengths(&params.penalty)?;
    let mut count = 0;
    let mut total = 0.0;
    let mut arrival_times = Vec::with_capacity(obs.nodes.len());
    let mut projected_queues = Vec::with_capacity(lengths.len());
    arrival_times.push(0.0);
    for (i, len) in lengths.iter().enumerate() {
        let t_edge = len / class.speed_cm_s;
        let r = &obs.readings[i];
        let queue = r.queue_length as f64 + r.arrival_rate * total - r.departure_rate * total;
        projected_queues.push(queue);
        let t_node = if queue > 0.0 {
            count += 1;
            if r.arrival_rate > 0.0 {
                queue / r.arrival_rate
            } else {
                params.t_node_max
            }
        } else {
            0.0
        };
        total += t_edge + t_node;
        arrival_times.push(total);
    }
    Ok(CongestionForecast {
        congestion_count: count,
        total_time: total,
        arrival_times,
        projected_queues,
    })
}

/// Predicted traversal time including queueing delays.
pub fn goal_time(obs: &Observation<'_>, class: &EvacueeClass, params: &QosParams) -> Result<f64, QosError> {
    Ok(predict_congestion(obs, class, params)?.total_time)
}

/// Braking, straight-line and turning energy of a path.
pub fn goal_energy(obs: &Observation<'_>, class: &EvacueeClass, params: &QosParams) -> Result<f64, QosError> {
    let forecast = predict_congestion(obs, class, params)?;
    let lengths = obs.effective_lengths(&params.penalty)?;
    let straight: f64 = lengths.iter().map(|l| class.c_s * l).sum();
    let mut turning = 0.0;
    for w in obs.nodes.windows(3) {
        turning += class.c_t * obs.graph.rotation_angle(w[0], w[1], w[2])?;
    }
    Ok(class.c_b * forecast.congestion_count as f64 + straight + turning)
}

/// Predicted hazard exposure along a path plus the effective safety of
/// every traversed edge. Exposure at a node only counts once the fire has
/// reached it by the time the evacuee arrives.
pub fn goal_safety(
    obs: &Observation<'_>,
    class: &EvacueeClass,
    hazard: &HazardState,
    params: &QosParams,
    t_current: f64,
) -> Result<f64, QosError> {
    let forecast = predict_congestion(obs, class, params)?;
    let edges = obs.edge_indices()?;
    let b = hazard.growth_rate();
    let mut total = 0.0;
    for (i, &k) in edges.iter().enumerate() {
        let next = obs.nodes[i + 1];
        let when = forecast.arrival_times[i + 1] + t_current;
        let reach = hazard.reach_time(next);
        if when >= reach {
            total += b * (when - reach);
        }
        total += obs.graph.effective_safety(k);
    }
    Ok(total)
}

/// Sum of effective lengths at time `t`, with full knowledge of the hazard.
pub fn goal_distance(graph: &BuildingGraph, path: &[NodeId], hazard: &HazardState, t: f64) -> Result<f64, QosError> {
    path.windows(2)
        .map(|w| {
            graph
                .edge_between(w[0], w[1])
                .map(|k| effective_length(graph.edge(k), hazard, t))
                .ok_or(QosError::Graph(GraphError::MissingEdge(w[0], w[1])))
        })
        .sum()
}

/// Sum of effective lengths as observed by a packet.
pub fn goal_distance_observed(obs: &Observation<'_>, params: &QosParams) -> Result<f64, QosError> {
    Ok(obs.effective_lengths(&params.penalty)?.iter().sum())
}

/// Evaluates the goal a packet was sent to optimize.
pub fn evaluate(
    goal: GoalClass,
    obs: &Observation<'_>,
    class: &EvacueeClass,
    hazard: &HazardState,
    params: &QosParams,
    t_current: f64,
) -> Result<f64, QosError> {
    match goal {
        GoalClass::Time => goal_time(obs, class, params),
        GoalClass::Energy => goal_energy(obs, class, params),
        GoalClass::Safety => goal_safety(obs, class, hazard, params, t_current),
        GoalClass::Distance => goal_distance_observed(obs, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_graphs::{edge, node};
    use crate::hazard::HazardConfig;

    fn quiet(nodes: &[NodeId]) -> Vec<SensorReading> {
        nodes
            .iter()
            .map(|&n| SensorReading {
                node: n,
                ..Default::default()
            })
            .collect()
    }

    fn class(speed: f64) -> EvacueeClass {
        EvacueeClass {
            speed_cm_s: speed,
            ..EvacueeClass::normal()
        }
    }

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    /// 0 -(300)- 1 -(200)- 2(exit) along x; 1 -(100)- 3 going up in y.
    fn corner() -> BuildingGraph {
        BuildingGraph::new(
            vec![
                node(0, 0.0, 0.0, false),
                node(1, 300.0, 0.0, false),
                node(2, 500.0, 0.0, true),
                node(3, 300.0, 100.0, true),
            ],
            vec![edge(0, 1, 300.0), edge(1, 2, 200.0), edge(1, 3, 100.0)],
        )
        .unwrap()
    }

    #[test]
    fn k_clamp() {
        assert_eq!(positive_part(-3.0), 0.0);
        assert_eq!(positive_part(4.0), 4.0);
        assert_eq!(positive_part(0.0), 0.0);
    }

    #[test]
    fn single_edge_without_queues() {
        let g = crate::graph::test_graphs::line3();
        let path = ids(&[1, 2]);
        let r = quiet(&path);
        let obs = Observation::new(&g, &path, &r).unwrap();
        let mut g5 = class(100.0);
        g5.speed_cm_s = 20.0; // 100 cm edge -> 5 s
        let f = predict_congestion(&obs, &g5, &QosParams::default()).unwrap();
        assert_eq!(f.congestion_count, 0);
        assert_eq!(f.total_time, 5.0);
    }

    #[test]
    fn queued_node_hand_evaluated() {
        // Reach node 1 after 5 s (500 cm at 100 cm/s); q0 = 2, λ = 0.5, μ = 0.1
        // => Q = 2 + 2.5 - 0.5 = 4, wait 8 s, one congestion event.
        let g = BuildingGraph::new(
            vec![node(0, 0.0, 0.0, false), node(1, 500.0, 0.0, false), node(2, 1000.0, 0.0, true)],
            vec![edge(0, 1, 500.0), edge(1, 2, 500.0)],
        )
        .unwrap();
        let path = ids(&[0, 1, 2]);
        let mut r = quiet(&path);
        r[1].queue_length = 2;
        r[1].arrival_rate = 0.5;
        r[1].departure_rate = 0.1;
        let obs = Observation::new(&g, &path, &r).unwrap();
        let f = predict_congestion(&obs, &class(100.0), &QosParams::default()).unwrap();
        assert!((f.projected_queues[1] - 4.0).abs() < 1e-12);
        assert_eq!(f.congestion_count, 1);
        assert!((f.total_time - (5.0 + 8.0 + 5.0)).abs() < 1e-12);
        assert_eq!(goal_time(&obs, &class(100.0), &QosParams::default()).unwrap(), f.total_time);
    }

    #[test]
    fn zero_arrival_rate_is_capped() {
        let g = crate::graph::test_graphs::line3();
        let path = ids(&[0, 1, 2]);
        let mut r = quiet(&path);
        r[0].queue_length = 3;
        let obs = Observation::new(&g, &path, &r).unwrap();
        let f = predict_congestion(&obs, &class(100.0), &QosParams::default()).unwrap();
        assert_eq!(f.total_time, DEFAULT_T_NODE_MAX + 2.0);
    }

    #[test]
    fn two_edges_pure_travel() {
        let g = corner();
        let path = ids(&[0, 1, 2]);
        let r = quiet(&path);
        let obs = Observation::new(&g, &path, &r).unwrap();
        assert_eq!(goal_time(&obs, &class(100.0), &QosParams::default()).unwrap(), 5.0);
    }

    #[test]
    fn mismatched_readings_rejected() {
        let g = corner();
        let path = ids(&[0, 1, 2]);
        let r = quiet(&path[..2]);
        assert!(matches!(
            Observation::new(&g, &path, &r),
            Err(QosError::ReadingsMismatch { nodes: 3, readings: 2 })
        ));
        let bad = ids(&[0, 2]);
        let r = quiet(&bad);
        let obs = Observation::new(&g, &bad, &r).unwrap();
        assert!(goal_time(&obs, &class(1.0), &QosParams::default()).is_err());
    }

    #[test]
    fn energy_terms() {
        let g = corner();
        let c = EvacueeClass {
            c_s: 0.01,
            c_t: 0.2,
            c_b: 10.0,
            ..class(100.0)
        };
        let straight = ids(&[0, 1, 2]);
        let r = quiet(&straight);
        let obs = Observation::new(&g, &straight, &r).unwrap();
        let e = goal_energy(&obs, &c, &QosParams::default()).unwrap();
        assert!((e - 0.01 * 500.0).abs() < 1e-12);

        let turn = ids(&[0, 1, 3]);
        let r = quiet(&turn);
        let obs = Observation::new(&g, &turn, &r).unwrap();
        let e = goal_energy(&obs, &c, &QosParams::default()).unwrap();
        assert!((e - (0.01 * 400.0 + 18.0)).abs() < 1e-9);

        // two predicted congestion events -> +20
        let mut r = quiet(&straight);
        r[0].queue_length = 1;
        r[0].arrival_rate = 1.0;
        r[1].queue_length = 1;
        r[1].arrival_rate = 1.0;
        r[1].departure_rate = 1.0;
        let obs = Observation::new(&g, &straight, &r).unwrap();
        let f = predict_congestion(&obs, &c, &QosParams::default()).unwrap();
        assert_eq!(f.congestion_count, 2);
        let e = goal_energy(&obs, &c, &QosParams::default()).unwrap();
        assert!((e - (20.0 + 0.01 * 500.0)).abs() < 1e-9);
    }

    #[test]
    fn safety_without_fire_is_effective_safety() {
        let g = corner();
        let path = ids(&[0, 1, 2]);
        let r = quiet(&path);
        let obs = Observation::new(&g, &path, &r).unwrap();
        let h = HazardState::none(&g);
        let s = goal_safety(&obs, &class(100.0), &h, &QosParams::default(), 0.0).unwrap();
        assert!((s - (300.0 + 200.0) / 300.0).abs() < 1e-12);
        assert!(s > 0.0);
    }

    #[test]
    fn safety_exposure_after_arrival() {
        // Fire starts at node 2 at t = 0 with b = 0.5; spread is fast enough
        // that node 2 is reached at t = 0. Evacuee at node 1 needs 2 s to get
        // there and asks at t_current = 8, so it arrives 10 s after the fire.
        let g = corner();
        let cfg = HazardConfig {
            source: NodeId(2),
            spread_rate_cm_s: 1e9,
            growth_rate_per_s: 0.5,
            start_time_s: 0.0,
            penalty: 1.0,
            block_threshold: 10.0,
        };
        let h = HazardState::new(&g, &cfg).unwrap();
        let path = ids(&[1, 2]);
        let r = quiet(&path);
        let obs = Observation::new(&g, &path, &r).unwrap();
        let s = goal_safety(&obs, &class(100.0), &h, &QosParams::default(), 8.0).unwrap();
        let es = 200.0 / 300.0;
        assert!((s - (5.0 + es)).abs() < 1e-6, "{s}");

        let flat = HazardState::new(&g, &HazardConfig { growth_rate_per_s: 0.0, ..cfg }).unwrap();
        let s = goal_safety(&obs, &class(100.0), &flat, &QosParams::default(), 8.0).unwrap();
        assert!((s - es).abs() < 1e-12);
    }

    #[test]
    fn distance_goal() {
        let g = corner();
        let h = HazardState::none(&g);
        assert_eq!(goal_distance(&g, &ids(&[0, 1, 2]), &h, 0.0).unwrap(), 500.0);
        assert_eq!(goal_distance(&g, &ids(&[1, 3]), &h, 0.0).unwrap(), 100.0);
    }

    /// Brute-force queue: arrivals at k/λ, service opportunities at m/μ,
    /// arrivals first on ties. Returns the queue at time `t`.
    fn discrete_queue(q0: u32, lambda: f64, mu: f64, t: f64) -> i64 {
        let mut events: Vec<(f64, bool)> = Vec::new();
        if lambda > 0.0 {
            let mut k = 1.0;
            while k / lambda <= t {
                events.push((k / lambda, true));
                k += 1.0;
            }
        }
        if mu > 0.0 {
            let mut m = 1.0;
            while m / mu <= t {
                events.push((m / mu, false));
                m += 1.0;
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut q = q0 as i64;
        for (_, arrival) in events {
            if arrival {
                q += 1;
            } else if q > 0 {
                q -= 1;
            }
        }
        q
    }

    #[test]
    fn three_node_line_matches_discrete_queue() {
        // node 0: congested (q0 = 3, λ = 1.5 ≥ μ = 1.0); node 1: free (q0 = 0, λ = 0.4 < μ = 0.9)
        let g = BuildingGraph::new(
            vec![node(0, 0.0, 0.0, false), node(1, 400.0, 0.0, false), node(2, 800.0, 0.0, true)],
            vec![edge(0, 1, 400.0), edge(1, 2, 400.0)],
        )
        .unwrap();
        let path = ids(&[0, 1, 2]);
        let mut r = quiet(&path);
        r[0] = SensorReading { node: NodeId(0), queue_length: 3, arrival_rate: 1.5, departure_rate: 1.0, hazard_intensity: 0.0 };
        r[1] = SensorReading { node: NodeId(1), queue_length: 0, arrival_rate: 0.4, departure_rate: 0.9, hazard_intensity: 0.0 };
        let obs = Observation::new(&g, &path, &r).unwrap();
        let f = predict_congestion(&obs, &class(100.0), &QosParams::default()).unwrap();
        let mut sim_count = 0;
        for i in 0..2 {
            let t = f.arrival_times[i];
            let sim = discrete_queue(r[i].queue_length, r[i].arrival_rate, r[i].departure_rate, t);
            assert!((positive_part(f.projected_queues[i]) - sim as f64).abs() <= 1.0);
            if sim > 0 {
                sim_count += 1;
            }
        }
        assert_eq!(f.congestion_count, sim_count);
    }
}
