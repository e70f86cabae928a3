use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SceneGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub object_count: usize,
    pub edge_count: usize,
    pub attrs_per_object: f64,
    pub relation_histogram: BTreeMap<String, usize>,
    pub self_loops: usize,
}

impl GraphStats {
    pub fn of(g: &SceneGraph) -> Self {
        let mut relation_histogram = BTreeMap::new();
        for e in g.edges() {
            *relation_histogram.entry(e.relation.clone()).or_insert(0) += 1;
        }
        let attrs: usize = g.nodes().iter().map(|n| n.attributes.len()).sum();
        Self {
            object_count: g.node_count(),
            edge_count: g.edge_count(),
            attrs_per_object: if g.node_count() == 0 {
                0.0
            } else {
                attrs as f64 / g.node_count() as f64
            },
            relation_histogram,
            self_loops: g.edges().iter().filter(|e| e.is_self_loop()).count(),
        }
    }

    /// Averages counts over a collection (histogram entries are summed).
    pub fn mean(graphs: &[SceneGraph]) -> Option<Self> {
        if graphs.is_empty() {
            return None;
        }
        let n = graphs.len() as f64;
        let mut out = GraphStats {
            object_count: 0,
            edge_count: 0,
            attrs_per_object: 0.0,
            relation_histogram: BTreeMap::new(),
            self_loops: 0,
        };
        let mut objects = 0.0;
        let mut edges = 0.0;
        for g in graphs {
            let s = g.stats();
            objects += s.object_count as f64;
            edges += s.edge_count as f64;
            out.attrs_per_object += s.attrs_per_object / n;
            out.self_loops += s.self_loops;
            for (k, v) in s.relation_histogram {
                *out.relation_histogram.entry(k).or_insert(0) += v;
            }
        }
        out.object_count = (objects / n).round() as usize;
        out.edge_count = (edges / n).round() as usize;
        Some(out)
    }
}
