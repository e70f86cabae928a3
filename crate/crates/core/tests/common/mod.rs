#![allow(dead_code)]

pub mod checks;

use proptest::prelude::*;
use rand::Rng;
use sgvqa::graph::build_vocabulary;
use sgvqa::{ObjectNode, RelationEdge, SceneGraph, Vocabulary};

pub const NAMES: [&str; 6] = ["dog", "cup", "table", "lamp", "car", "tree"];
pub const ATTRS: [&str; 6] = ["red", "blue", "small", "wooden", "tall", "shiny"];
pub const RELATIONS: [&str; 4] = ["near", "on top of", "behind", "to the left of"];

fn arb_node(confidences: bool) -> impl Strategy<Value = ObjectNode> {
    (
        0..NAMES.len(),
        proptest::collection::vec(0..ATTRS.len(), 0..4),
        0.0..1.0f64,
        proptest::collection::vec(0.0..1.0f64, 4),
    )
        .prop_map(move |(n, attrs, c, ac)| {
            let attributes: Vec<String> = attrs.iter().map(|&a| ATTRS[a].to_string()).collect();
            let node = ObjectNode::new(NAMES[n], attributes.clone());
            if confidences {
                node.with_confidences(c, ac[..attributes.len()].to_vec())
            } else {
                node
            }
        })
}

/// Random valid graphs with `1..=max_nodes` nodes and up to `max_edges`
/// edges (self-loops and parallel edges allowed).
pub fn arb_graph(max_nodes: usize, max_edges: usize, confidences: bool) -> impl Strategy<Value = SceneGraph> {
    proptest::collection::vec(arb_node(confidences), 1..=max_nodes).prop_flat_map(move |nodes| {
        let n = nodes.len();
        let edge = (0..RELATIONS.len(), 0..n, 0..n, 0.0..1.0f64).prop_map(move |(r, s, t, c)| {
            let e = RelationEdge::new(RELATIONS[r], s, t);
            if confidences {
                e.with_confidence(c)
            } else {
                e
            }
        });
        proptest::collection::vec(edge, 0..=max_edges)
            .prop_map(move |edges| SceneGraph::new("img", nodes.clone(), edges).expect("valid by construction"))
    })
}

/// A graph with a random node permutation.
pub fn arb_permuted(max_nodes: usize, max_edges: usize) -> impl Strategy<Value = (SceneGraph, Vec<usize>)> {
    arb_graph(max_nodes, max_edges, false).prop_flat_map(|g| {
        let order: Vec<usize> = (0..g.node_count()).collect();
        (Just(g), Just(order).prop_shuffle())
    })
}

pub fn test_vocabulary() -> Vocabulary {
    let words: Vec<String> = NAMES
        .iter()
        .chain(&ATTRS)
        .chain(&RELATIONS)
        .map(|s| s.to_string())
        .collect();
    let g = SceneGraph::new("v", vec![ObjectNode::new("dog", vec![])], vec![]).unwrap();
    build_vocabulary(&[g], words.iter().map(String::as_str).chain(["what is the color of the"]), 1).unwrap()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-7)
}

/// The same distribution as `arb_graph`, drawn from a plain generator for
/// corpora too large to shrink usefully.
pub fn random_graph(rng: &mut impl Rng, id: &str, max_nodes: usize, max_edges: usize, confidences: bool) -> SceneGraph {
    let n = rng.random_range(1..=max_nodes);
    let nodes = (0..n)
        .map(|_| {
            let attrs: Vec<String> = (0..rng.random_range(0..4)).map(|_| ATTRS[rng.random_range(0..ATTRS.len())].to_string()).collect();
            let node = ObjectNode::new(NAMES[rng.random_range(0..NAMES.len())], attrs.clone());
            if confidences {
                let c = attrs.iter().map(|_| rng.random::<f64>()).collect();
                node.with_confidences(rng.random(), c)
            } else {
                node
            }
        })
        .collect();
    let edges = (0..rng.random_range(0..=max_edges))
        .map(|_| {
            let e = RelationEdge::new(RELATIONS[rng.random_range(0..RELATIONS.len())], rng.random_range(0..n), rng.random_range(0..n));
            if confidences {
                e.with_confidence(rng.random())
            } else {
                e
            }
        })
        .collect();
    SceneGraph::new(id, nodes, edges).expect("valid by construction")
}
