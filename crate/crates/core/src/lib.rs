//! Discrete-time building evacuation simulator whose routing is a cognitive
//! packet network: smart packets explore the building graph, learn routes
//! under a per-class goal (time, energy, safety or distance) and evacuees
//! follow what the network has learned. A hazard-aware Dijkstra router is
//! included as a baseline.

pub mod cpn;
pub mod experiment;
pub mod graph;
pub mod hazard;
pub mod qos;
pub mod scenario;
pub mod sim;

pub use graph::{BuildingGraph, GraphEdge, GraphError, GraphNode, NodeId, Path};
pub use hazard::{HazardConfig, HazardPenalty, HazardState, SensorField, SensorReading};
pub use qos::{ClassName, EvacueeClass, GoalClass, QosParams};
pub use scenario::{Scenario, ScenarioError};
pub use sim::{OscillationPolicy, RoutingMode, SimConfig, SimResult, Simulation};
