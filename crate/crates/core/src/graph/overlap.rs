use serde::{Deserialize, Serialize};

use super::SceneGraph;
use crate::error::{Error, Result};

/// How a generated graph lines up against the ground truth for the same image.
///
/// Objects are matched by exact lowercase name. Spurious counts are measured on
/// the generated (second) graph only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub gt_objects: usize,
    pub gen_objects: usize,
    pub matched_objects: usize,
    pub missing_objects: usize,
    /// Mean number of generated attributes absent from the matched GT object.
    pub spurious_attributes_per_object: f64,
    pub matched_attributes: usize,
    pub gt_edges: usize,
    pub gen_edges: usize,
    pub matched_edges: usize,
}

pub fn overlap_report(gt: &SceneGraph, gen: &SceneGraph) -> Result<OverlapReport> {
    if gt.image_id() != gen.image_id() {
        return Err(Error::ImageMismatch {
            left: gt.image_id().to_string(),
            right: gen.image_id().to_string(),
        });
    }
    // Greedy: each GT object takes the first unused generated object with the same name.
    let gen_names: Vec<String> = gen.nodes().iter().map(|n| n.name.to_lowercase()).collect();
    let mut used = vec![false; gen.node_count()];
    let mut gt_to_gen = vec![None; gt.node_count()];
    for (i, node) in gt.nodes().iter().enumerate() {
        let name = node.name.to_lowercase();
        if let Some(j) = (0..gen.node_count()).find(|&j| !used[j] && gen_names[j] == name) {
            used[j] = true;
            gt_to_gen[i] = Some(j);
        }
    }
    let matched_objects = gt_to_gen.iter().filter(|m| m.is_some()).count();

    let mut matched_attributes = 0;
    let mut spurious = 0;
    for (i, j) in gt_to_gen.iter().enumerate() {
        let Some(j) = *j else { continue };
        let mut remaining: Vec<&String> = gt.nodes()[i].attributes.iter().collect();
        for attr in &gen.nodes()[j].attributes {
            match remaining.iter().position(|a| *a == attr) {
                Some(p) => {
                    remaining.swap_remove(p);
                    matched_attributes += 1;
                }
                None => spurious += 1,
            }
        }
    }

    let mut edge_used = vec![false; gen.edge_count()];
    let mut matched_edges = 0;
    for e in gt.edges() {
        let (Some(s), Some(r)) = (gt_to_gen[e.source], gt_to_gen[e.receiver]) else {
            continue;
        };
        let hit = gen.edges().iter().enumerate().find(|(k, g)| {
            !edge_used[*k] && g.source == s && g.receiver == r && g.relation == e.relation
        });
        if let Some((k, _)) = hit {
            edge_used[k] = true;
            matched_edges += 1;
        }
    }

    Ok(OverlapReport {
        gt_objects: gt.node_count(),
        gen_objects: gen.node_count(),
        matched_objects,
        missing_objects: gt.node_count() - matched_objects,
        spurious_attributes_per_object: if matched_objects == 0 {
            0.0
        } else {
            spurious as f64 / matched_objects as f64
        },
        matched_attributes,
        gt_edges: gt.edge_count(),
        gen_edges: gen.edge_count(),
        matched_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ObjectNode, RelationEdge};

    fn gt() -> SceneGraph {
        SceneGraph::new(
            "i",
            vec![
                ObjectNode::new("Cup", vec!["red".into()]),
                ObjectNode::new("table", vec!["wooden".into()]),
                ObjectNode::new("lamp", vec![]),
            ],
            vec![RelationEdge::new("on", 0, 1), RelationEdge::new("near", 2, 1)],
        )
        .unwrap()
    }

    #[test]
    fn identity_has_full_overlap() {
        let g = gt();
        let r = overlap_report(&g, &g).unwrap();
        assert_eq!(r.missing_objects, 0);
        assert_eq!(r.matched_edges, r.gt_edges);
        assert_eq!(r.spurious_attributes_per_object, 0.0);
        assert_eq!(r.matched_attributes, 2);
    }

    #[test]
    fn renamed_relations_match_no_edges() {
        let g = gt();
        let (id, nodes, edges) = g.clone().into_parts();
        let edges = edges.into_iter().map(|e| RelationEdge { relation: "behind".into(), ..e }).collect();
        let gen = SceneGraph::new(id, nodes, edges).unwrap();
        let r = overlap_report(&g, &gen).unwrap();
        assert_eq!(r.matched_edges, 0);
        assert_eq!(r.matched_objects, 3);
    }

    #[test]
    fn missing_and_spurious_are_counted() {
        let gen = SceneGraph::new(
            "i",
            vec![
                ObjectNode::new("cup", vec!["red".into(), "blue".into(), "brown".into()]),
                ObjectNode::new("table", vec!["wooden".into()]),
            ],
            vec![RelationEdge::new("on", 0, 1)],
        )
        .unwrap();
        let r = overlap_report(&gt(), &gen).unwrap();
        assert_eq!(r.matched_objects, 2);
        assert_eq!(r.missing_objects, 1);
        assert_eq!(r.matched_edges, 1);
        assert_eq!(r.spurious_attributes_per_object, 1.0);
        assert!(r.matched_edges <= r.gt_edges.min(r.gen_edges));
    }

    #[test]
    fn image_mismatch_is_an_error() {
        let other = SceneGraph::new("j", vec![ObjectNode::new("a", vec![])], vec![]).unwrap();
        assert!(matches!(overlap_report(&gt(), &other), Err(Error::ImageMismatch { .. })));
    }
}
