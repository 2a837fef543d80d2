//! Scenario documents: the JSON description of a building, its fire, and
//! the evacuee classes that populate it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BuildingGraph, GraphEdge, GraphError, GraphNode};
use crate::hazard::HazardConfig;
use crate::qos::EvacueeClass;

pub const SCHEMA_VERSION: u32 = 1;

/// The three-floor demo building shipped with the crate.
pub const DEMO_SCENARIO: &str = include_str!("../scenarios/three_floor.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] GraphError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Serialized form. Field order here is the canonical output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDoc {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard: Option<HazardConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<EvacueeClass>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: Option<String>,
    pub description: Option<String>,
    pub graph: BuildingGraph,
    pub hazard: Option<HazardConfig>,
    pub classes: Vec<EvacueeClass>,
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let doc: ScenarioDoc = serde_json::from_str(text)?;
        if doc.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(doc.schema));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario documents always serialize")
    }
}

/// Parses and validates the graph part of a scenario document.
pub fn load_graph(text: &str) -> Result<BuildingGraph, ScenarioError> {
    let doc = ScenarioDoc::parse(text)?;
    Ok(BuildingGraph::new(doc.nodes, doc.edges)?)
}

pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let doc = ScenarioDoc::parse(text)?;
    let graph = BuildingGraph::new(doc.nodes, doc.edges)?;
    if let Some(h) = &doc.hazard {
        // validates source and rates against the graph
        crate::hazard::HazardState::new(&graph, h)?;
    }
    for c in &doc.classes {
        c.validate().map_err(GraphError::Invalid)?;
    }
    Ok(Scenario {
        name: doc.name,
        description: doc.description,
        graph,
        hazard: doc.hazard,
        classes: doc.classes,
    })
}

pub fn load_scenario_file(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
    load_scenario(&std::fs::read_to_string(path)?)
}

impl Scenario {
    pub fn demo() -> Self {
        load_scenario(DEMO_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn to_doc(&self) -> ScenarioDoc {
        ScenarioDoc {
            schema: SCHEMA_VERSION,
            name: self.name.clone(),
            description: self.description.clone(),
            nodes: self.graph.nodes().to_vec(),
            edges: self.graph.edges().to_vec(),
            hazard: self.hazard.clone(),
            classes: self.classes.clone(),
        }
    }

    /// Same building and population, no fire.
    pub fn without_hazard(&self) -> Self {
        Scenario {
            hazard: None,
            ..self.clone()
        }
    }
}

/// Serializes a bare graph as a schema-1 document.
pub fn graph_to_doc(graph: &BuildingGraph) -> ScenarioDoc {
    ScenarioDoc {
        schema: SCHEMA_VERSION,
        name: None,
        description: None,
        nodes: graph.nodes().to_vec(),
        edges: graph.edges().to_vec(),
        hazard: None,
        classes: Vec::new(),
    }
}
