mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgvqa::encoder::{encode, gn_iterate, Encoder, GraphState};
use sgvqa::nn::{Activation, Mlp};
use sgvqa::tensor::{Matrix, ParamStore};

use common::checks::{empty_segments_are_zero, encoder, hand_computed_round_error, permutation_error, small_encoder_config};
use common::{arb_graph, arb_permuted, test_vocabulary};

/// Straight-line two-layer perceptron read from the parameter store.
fn mlp_ref(store: &ParamStore<f64>, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let layer = |w: &Matrix<f64>, b: &Matrix<f64>, x: &[f64]| -> Vec<f64> {
        (0..w.cols())
            .map(|j| b.get(0, j) + x.iter().enumerate().map(|(i, xi)| xi * w.get(i, j)).sum::<f64>())
            .collect()
    };
    let mut h = layer(store.get(m.hidden.weight), store.get(m.hidden.bias), x);
    if m.activation == Activation::Relu {
        h.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    layer(store.get(m.output.weight), store.get(m.output.bias), &h)
}

fn mean(rows: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    if !rows.is_empty() {
        out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    }
    out
}

/// One Graph Network round written out edge by edge and node by node.
fn round_ref(enc: &Encoder, store: &ParamStore<f64>, s: &GraphState<f64>) -> GraphState<f64> {
    let d = enc.config.state_dim;
    let v: Vec<Vec<f64>> = (0..s.node_vectors.rows()).map(|i| s.node_vectors.row(i).to_vec()).collect();
    let u = s.global.clone();
    let mut edges = Vec::new();
    for k in 0..s.senders.len() {
        let input = [s.edge_vectors.row(k), &v[s.receivers[k]], &v[s.senders[k]], &u].concat();
        edges.push(mlp_ref(store, &enc.edge_net, &input));
    }
    let mut nodes = Vec::new();
    for (i, vi) in v.iter().enumerate() {
        let incoming: Vec<Vec<f64>> = (0..edges.len()).filter(|&k| s.receivers[k] == i).map(|k| edges[k].clone()).collect();
        let input = [mean(&incoming, d), vi.clone(), u.clone()].concat();
        nodes.push(mlp_ref(store, &enc.node_net, &input));
    }
    let input = [mean(&edges, d), mean(&nodes, d), u].concat();
    let global = mlp_ref(store, &enc.global_net, &input);
    GraphState {
        edge_vectors: Matrix::from_vec(edges.len(), d, edges.concat()),
        node_vectors: Matrix::from_rows(&nodes),
        global,
        senders: s.senders.clone(),
        receivers: s.receivers.clone(),
    }
}

#[test]
fn two_nodes_one_edge_matches_hand_computation() {
    let err = hand_computed_round_error();
    assert!(err < 1e-6, "deviation {err}");
}

#[test]
fn empty_segment_mean_is_exactly_zero() {
    assert!(empty_segments_are_zero());
}

#[test]
fn isolated_node_does_not_reach_others_in_one_round() {
    let (enc, store) = encoder::<f32>(small_encoder_config(1), 4, 3);
    let base = GraphState {
        edge_vectors: Matrix::from_rows(&[vec![0.1, -0.2, 0.3, 0.0]]),
        node_vectors: Matrix::from_rows(&[vec![0.5, 0.1, -0.4, 0.2], vec![-0.3, 0.7, 0.0, 0.1], vec![0.9, 0.9, 0.9, 0.9]]),
        global: vec![0.2, -0.1, 0.05, 0.3],
        senders: vec![0],
        receivers: vec![1],
    };
    let mut moved = base.clone();
    moved.node_vectors.row_mut(2).copy_from_slice(&[-5.0, 4.0, 2.0, -1.0]);
    let a = gn_iterate(&base, &enc, &store, 1).unwrap();
    let b = gn_iterate(&moved, &enc, &store, 1).unwrap();
    assert_eq!(a.edge_vectors, b.edge_vectors);
    assert_eq!(a.node_vectors.row(0), b.node_vectors.row(0));
    assert_eq!(a.node_vectors.row(1), b.node_vectors.row(1));
    assert_ne!(a.node_vectors.row(2), b.node_vectors.row(2));
}

#[test]
fn encoding_is_deterministic() {
    let vocab = test_vocabulary();
    let q = vocab.encode("what is the color of the cup");
    let nodes = common::NAMES
        .iter()
        .zip(common::ATTRS)
        .map(|(n, a)| sgvqa::ObjectNode::new(*n, vec![a.to_string()]))
        .collect();
    let g = sgvqa::SceneGraph::new("x", nodes, vec![sgvqa::RelationEdge::new("near", 0, 1)]).unwrap();
    let (enc, store) = encoder::<f32>(small_encoder_config(3), vocab.len(), 9);
    let a = encode(&g, &q, &vocab, &enc, &store).unwrap();
    let b = encode(&g, &q, &vocab, &enc, &store).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.rows(), g.node_count() + 1);
}

fn random_state(g: &sgvqa::SceneGraph, d: usize, seed: u64) -> GraphState<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r: usize| Matrix::from_vec(r, d, (0..r * d).map(|_| rng.random_range(-1.0..1.0)).collect());
    let edge_vectors = m(g.edge_count());
    let node_vectors = m(g.node_count());
    let global = m(1).into_vec();
    GraphState {
        edge_vectors,
        node_vectors,
        global,
        senders: g.edges().iter().map(|e| e.source).collect(),
        receivers: g.edges().iter().map(|e| e.receiver).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iterate_matches_straight_line_reference(g in arb_graph(5, 7, false), seed in 0u64..1000, t in 1usize..4) {
        let (enc, store) = encoder::<f64>(small_encoder_config(t), 4, seed);
        let state = random_state(&g, 4, seed + 1);
        let got = gn_iterate(&state, &enc, &store, t).unwrap();
        let mut want = state;
        for _ in 0..t {
            want = round_ref(&enc, &store, &want);
        }
        for (a, b) in got.node_vectors.data().iter().zip(want.node_vectors.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in got.edge_vectors.data().iter().zip(want.edge_vectors.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in got.global.iter().zip(&want.global) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn encoding_is_permutation_equivariant((g, order) in arb_permuted(6, 8), seed in 0u64..1000) {
        let err = permutation_error(&g, &order, seed);
        prop_assert!(err <= 1e-5, "deviation {err}");
    }
}
