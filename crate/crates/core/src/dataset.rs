use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::synthgen::GenRecipe;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Graph,
}

/// Something whose prediction gets explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instance {
    Node { graph: usize, node: usize },
    Graph { graph: usize },
}

impl Instance {
    pub fn graph_index(&self) -> usize {
        match *self {
            Instance::Node { graph, .. } | Instance::Graph { graph } => graph,
        }
    }
}

/// A named set of graphs. Node-classification datasets hold exactly one
/// graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub num_labels: usize,
    pub graphs: Vec<Graph>,
    pub recipe: Option<GenRecipe>,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).sum()
    }

    pub fn total_edges(&self) -> usize {
        self.graphs.iter().map(Graph::num_edges).sum()
    }

    /// Items a classifier is trained and scored on: every node of the graph
    /// for node tasks, every graph otherwise.
    pub fn prediction_items(&self) -> Vec<Instance> {
        match self.task {
            Task::Node => (0..self.graphs[0].num_nodes()).map(|node| Instance::Node { graph: 0, node }).collect(),
            Task::Graph => (0..self.graphs.len()).map(|graph| Instance::Graph { graph }).collect(),
        }
    }

    /// Instances with a ground-truth explanation: nodes touching a motif
    /// edge, or graphs containing one. Data without any motif flags (ingested
    /// molecules) falls back to every prediction item.
    pub fn explainable_instances(&self) -> Vec<Instance> {
        if !self.graphs.iter().any(|g| g.motif_edges().iter().any(|&m| m)) {
            return self.prediction_items();
        }
        match self.task {
            Task::Node => {
                let g = &self.graphs[0];
                let mut on_motif = vec![false; g.num_nodes()];
                for (e, &(a, _)) in g.edges().iter().enumerate() {
                    if g.motif_edges()[e] {
                        on_motif[a] = true;
                    }
                }
                (0..g.num_nodes()).filter(|&n| on_motif[n]).map(|node| Instance::Node { graph: 0, node }).collect()
            }
            Task::Graph => (0..self.graphs.len())
                .filter(|&i| self.graphs[i].motif_edges().iter().any(|&m| m))
                .map(|graph| Instance::Graph { graph })
                .collect(),
        }
    }

    /// Class label of an item.
    pub fn label(&self, item: Instance) -> Result<usize> {
        let g = self
            .graphs
            .get(item.graph_index())
            .ok_or_else(|| Error::Parameter(format!("no graph {}", item.graph_index())))?;
        match item {
            Instance::Node { node, .. } => g
                .node_labels()
                .get(node)
                .copied()
                .ok_or(Error::NodeIndex { node, num_nodes: g.num_nodes() }),
            Instance::Graph { .. } => g.graph_label().ok_or_else(|| Error::Contract("graph has no label".into())),
        }
    }
}
