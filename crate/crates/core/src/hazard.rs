//! Deterministic fire model: geodesic spread at a constant rate, then
//! linear growth at every reached node.

use serde::{Deserialize, Serialize};

use crate::graph::{BuildingGraph, GraphError, NodeId};

pub const DEFAULT_PENALTY: f64 = 1.0;
pub const DEFAULT_BLOCK_THRESHOLD: f64 = 10.0;

/// How hazard intensity inflates edge lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardPenalty {
    /// Length multiplier per intensity unit.
    pub penalty: f64,
    /// Intensity above which an endpoint makes its edges impassable.
    pub block_threshold: f64,
}

impl Default for HazardPenalty {
    fn default() -> Self {
        HazardPenalty {
            penalty: DEFAULT_PENALTY,
            block_threshold: DEFAULT_BLOCK_THRESHOLD,
        }
    }
}

impl HazardPenalty {
    /// `length * (1 + penalty * max(ia, ib))`, or infinity when either
    /// endpoint is past the blocking threshold.
    pub fn apply(&self, length: f64, ia: f64, ib: f64) -> f64 {
        let worst = ia.max(ib);
        if worst > self.block_threshold {
            f64::INFINITY
        } else {
            length * (1.0 + self.penalty * worst)
        }
    }

    pub fn blocks(&self, intensity: f64) -> bool {
        intensity > self.block_threshold
    }
}

/// Fire description as it appears in a scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardConfig {
    pub source: NodeId,
    pub spread_rate_cm_s: f64,
    pub growth_rate_per_s: f64,
    #[serde(default)]
    pub start_time_s: f64,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    #[serde(default = "default_block")]
    pub block_threshold: f64,
}

fn default_penalty() -> f64 {
    DEFAULT_PENALTY
}

fn default_block() -> f64 {
    DEFAULT_BLOCK_THRESHOLD
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardState {
    source: Option<NodeId>,
    spread_rate: f64,
    growth_rate: f64,
    /// Absolute simulation time at which the fire reaches each node.
    reach_time: Vec<f64>,
    penalty: HazardPenalty,
}

/// Geodesic distance from `source` divided by the spread rate.
pub fn compute_reach_times(graph: &BuildingGraph, source: NodeId, spread_rate: f64) -> Result<Vec<f64>, GraphError> {
    if !graph.contains(source) {
        return Err(GraphError::UnknownNode(source));
    }
    if !(spread_rate > 0.0) {
        return Err(GraphError::Invalid(format!("spread rate must be positive, got {spread_rate}")));
    }
    Ok(graph
        .distances(&[source], |e| e.length_cm)
        .into_iter()
        .map(|d| d / spread_rate)
        .collect())
}

impl HazardState {
    pub fn new(graph: &BuildingGraph, config: &HazardConfig) -> Result<Self, GraphError> {
        if config.growth_rate_per_s < 0.0 {
            return Err(GraphError::Invalid("growth rate must be nonnegative".into()));
        }
        let reach_time = compute_reach_times(graph, config.source, config.spread_rate_cm_s)?
            .into_iter()
            .map(|t| t + config.start_time_s)
            .collect();
        Ok(HazardState {
            source: Some(config.source),
            spread_rate: config.spread_rate_cm_s,
            growth_rate: config.growth_rate_per_s,
            reach_time,
            penalty: HazardPenalty {
                penalty: config.penalty,
                block_threshold: config.block_threshold,
            },
        })
    }

    /// A hazard that never reaches any node.
    pub fn none(graph: &BuildingGraph) -> Self {
        HazardState {
            source: None,
            spread_rate: f64::INFINITY,
            growth_rate: 0.0,
            reach_time: vec![f64::INFINITY; graph.node_count()],
            penalty: HazardPenalty::default(),
        }
    }

    pub fn source(&self) -> Option<NodeId> {
        self.source
    }

    pub fn spread_rate(&self) -> f64 {
        self.spread_rate
    }

    pub fn growth_rate(&self) -> f64 {
        self.growth_rate
    }

    pub fn penalty(&self) -> &HazardPenalty {
        &self.penalty
    }

    pub fn reach_time(&self, node: NodeId) -> f64 {
        self.reach_time[node.index()]
    }

    pub fn reach_times(&self) -> &[f64] {
        &self.reach_time
    }

    /// Zero before the fire arrives, then `b * (t - t_hr)`.
    pub fn intensity(&self, node: NodeId, t: f64) -> f64 {
        let reach = self.reach_time[node.index()];
        if t < reach {
            0.0
        } else {
            self.growth_rate * (t - reach)
        }
    }

    pub fn is_blocked(&self, node: NodeId, t: f64) -> bool {
        self.penalty.blocks(self.intensity(node, t))
    }
}

/// What a node's sensor reports.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorReading {
    pub node: NodeId,
    pub queue_length: u32,
    pub arrival_rate: f64,
    pub departure_rate: f64,
    pub hazard_intensity: f64,
}

/// Anything that can answer a sensor query for a node.
pub trait SensorField {
    fn read(&self, node: NodeId) -> SensorReading;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_graphs::{edge, node};
    use crate::graph::BuildingGraph;

    fn config(source: u32, a: f64, b: f64) -> HazardConfig {
        HazardConfig {
            source: NodeId(source),
            spread_rate_cm_s: a,
            growth_rate_per_s: b,
            start_time_s: 0.0,
            penalty: DEFAULT_PENALTY,
            block_threshold: DEFAULT_BLOCK_THRESHOLD,
        }
    }

    fn five() -> BuildingGraph {
        BuildingGraph::new(
            vec![
                node(0, 0.0, 0.0, true),
                node(1, 1.0, 0.0, false),
                node(2, 2.0, 0.0, false),
                node(3, 3.0, 0.0, false),
                node(4, 4.0, 0.0, false),
            ],
            vec![
                edge(0, 1, 100.0),
                edge(1, 2, 50.0),
                edge(0, 2, 400.0),
                edge(2, 3, 70.0),
                edge(3, 4, 30.0),
                edge(1, 4, 500.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn reach_times_are_geodesic_over_rate() {
        let g = five();
        let r = compute_reach_times(&g, NodeId(0), 10.0).unwrap();
        // hand-enumerated shortest distances from node 0
        let expected = [0.0, 100.0, 150.0, 220.0, 250.0];
        for (got, d) in r.iter().zip(expected) {
            assert!((got - d / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reach_time_errors() {
        let g = five();
        assert!(compute_reach_times(&g, NodeId(7), 1.0).is_err());
        assert!(compute_reach_times(&g, NodeId(0), 0.0).is_err());
    }

    #[test]
    fn intensity_growth() {
        let g = five();
        let h = HazardState::new(&g, &config(0, 10.0, 0.5)).unwrap();
        // node 1 reached at 10 s
        assert_eq!(h.intensity(NodeId(1), 9.99), 0.0);
        assert!((h.intensity(NodeId(1), 20.0) - 5.0).abs() < 1e-12);
        let flat = HazardState::new(&g, &config(0, 10.0, 0.0)).unwrap();
        for t in [0.0, 10.0, 1e4] {
            assert_eq!(flat.intensity(NodeId(3), t), 0.0);
        }
    }

    #[test]
    fn start_time_delays_the_fire() {
        let g = five();
        let mut c = config(0, 10.0, 1.0);
        c.start_time_s = 30.0;
        let h = HazardState::new(&g, &c).unwrap();
        assert_eq!(h.reach_time(NodeId(0)), 30.0);
        assert_eq!(h.intensity(NodeId(0), 29.0), 0.0);
    }

    #[test]
    fn penalty_formula() {
        let p = HazardPenalty::default();
        assert_eq!(p.apply(500.0, 0.0, 0.0), 500.0);
        assert_eq!(p.apply(500.0, 2.0, 0.0), 1500.0);
        assert_eq!(p.apply(500.0, 0.0, 10.5), f64::INFINITY);
    }

    #[test]
    fn triangle_property() {
        let g = five();
        let a = 7.0;
        let h = HazardState::new(&g, &config(3, a, 1.0)).unwrap();
        for e in g.edges() {
            let d = (h.reach_time(e.src) - h.reach_time(e.dst)).abs();
            assert!(d <= e.length_cm / a + 1e-9);
        }
    }
}
