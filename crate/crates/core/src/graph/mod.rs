//! Scene-graph data model.
//!
//! A [`SceneGraph`] holds the objects of one image as [`ObjectNode`]s and the
//! directed, labelled relations between them as [`RelationEdge`]s. The global
//! vector of the graph is attached later, at encoding time, from the question.
//!
//! Edges are kept in a canonical order (stable by source index) so that a
//! graph survives a trip through the per-object document layout unchanged.

mod io;
mod overlap;
mod stats;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    deserialize_graph, parse_scene_graph, read_scene_graph_file, read_scene_graphs,
    serialize_graph, write_scene_graph_file, write_scene_graphs, ParseReport,
};
pub use overlap::{overlap_report, OverlapReport};
pub use stats::GraphStats;
pub use vocab::{build_vocabulary, tokenize, Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

/// One object of a scene: a (possibly multi-word) name plus attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub name: String,
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_confidences: Option<Vec<f64>>,
}

impl ObjectNode {
    pub fn new(name: impl Into<String>, attributes: Vec<String>) -> Self {
        Self {
            name: name.into(),
            attributes,
            confidence: None,
            attribute_confidences: None,
        }
    }

    pub fn with_confidences(mut self, confidence: f64, attribute_confidences: Vec<f64>) -> Self {
        self.confidence = Some(confidence);
        self.attribute_confidences = Some(attribute_confidences);
        self
    }

    /// Name words followed by attribute words, lowercased.
    pub fn words(&self) -> Vec<String> {
        let mut words = tokenize(&self.name);
        for attr in &self.attributes {
            words.extend(tokenize(attr));
        }
        words
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidGraph(format!("object {index} has an empty name")));
        }
        if let Some(c) = self.confidence {
            check_probability(c, || format!("object {index} confidence"))?;
        }
        if let Some(confs) = &self.attribute_confidences {
            if confs.len() != self.attributes.len() {
                return Err(Error::InvalidGraph(format!(
                    "object {index} has {} attributes but {} attribute confidences",
                    self.attributes.len(),
                    confs.len()
                )));
            }
            for (j, &c) in confs.iter().enumerate() {
                check_probability(c, || format!("object {index} attribute {j} confidence"))?;
            }
        }
        Ok(())
    }
}

/// A directed relation `source --relation--> receiver`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub relation: String,
    pub source: usize,
    pub receiver: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl RelationEdge {
    pub fn new(relation: impl Into<String>, source: usize, receiver: usize) -> Self {
        Self {
            relation: relation.into(),
            source,
            receiver,
            confidence: None,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn is_self_loop(&self) -> bool {
        self.source == self.receiver
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    image_id: String,
    nodes: Vec<ObjectNode>,
    edges: Vec<RelationEdge>,
}

impl SceneGraph {
    /// Validates endpoints and confidences, then puts edges in canonical
    /// (stable by source) order.
    pub fn new(
        image_id: impl Into<String>,
        nodes: Vec<ObjectNode>,
        mut edges: Vec<RelationEdge>,
    ) -> Result<Self> {
        for (i, node) in nodes.iter().enumerate() {
            node.validate(i)?;
        }
        for (k, edge) in edges.iter().enumerate() {
            if edge.source >= nodes.len() || edge.receiver >= nodes.len() {
                return Err(Error::InvalidGraph(format!(
                    "edge {k} ({} -> {}) references a node outside 0..{}",
                    edge.source,
                    edge.receiver,
                    nodes.len()
                )));
            }
            if let Some(c) = edge.confidence {
                check_probability(c, || format!("edge {k} confidence"))?;
            }
        }
        edges.sort_by_key(|e| e.source);
        Ok(Self {
            image_id: image_id.into(),
            nodes,
            edges,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn nodes(&self) -> &[ObjectNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn into_parts(self) -> (String, Vec<ObjectNode>, Vec<RelationEdge>) {
        (self.image_id, self.nodes, self.edges)
    }

    /// Indices of edges whose receiver is `node`.
    pub fn incoming(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.receiver == node)
            .map(|(k, _)| k)
    }

    /// True when every node, attribute and edge carries a confidence.
    pub fn has_confidences(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.confidence.is_some() && n.attribute_confidences.is_some())
            && self.edges.iter().all(|e| e.confidence.is_some())
    }

    /// Reorders nodes so that new node `i` is old node `order[i]`, remapping
    /// edge endpoints to follow their objects.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        let mut new_index = vec![usize::MAX; n];
        if order.len() != n {
            return Err(Error::InvalidGraph(format!(
                "permutation has {} entries for {n} nodes",
                order.len()
            )));
        }
        for (new, &old) in order.iter().enumerate() {
            if old >= n || new_index[old] != usize::MAX {
                return Err(Error::InvalidGraph("not a permutation".into()));
            }
            new_index[old] = new;
        }
        let nodes = order.iter().map(|&old| self.nodes[old].clone()).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| RelationEdge {
                source: new_index[e.source],
                receiver: new_index[e.receiver],
                ..e.clone()
            })
            .collect();
        SceneGraph::new(self.image_id.clone(), nodes, edges)
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats::of(self)
    }
}

fn check_probability(value: f64, what: impl FnOnce() -> String) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidGraph(format!("{} = {value} is not in [0, 1]", what())))
    }
}
