//! Measurements shared by the integration tests and the acceptance run.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgvqa::encoder::{encode, gn_iterate, Encoder, EncoderConfig, GraphBatch, GraphState};
use sgvqa::models::{Example, KbVars, MacConfig, MacHead, ModelConfig, ModelKind, QaModel, QuestionEmbedding};
use sgvqa::nn::Activation;
use sgvqa::question::{AnswerVocabulary, QuestionSample, SemanticType};
use sgvqa::tensor::{Gradients, Matrix, ParamId, ParamStore, Tape};
use sgvqa::{ObjectNode, RelationEdge, SceneGraph};

use super::{relative_error, test_vocabulary};

const H: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-3;

/// Worst relative error over every scalar of every listed parameter.
fn worst_error(
    store: &mut ParamStore<f64>,
    ids: &[ParamId],
    loss: impl Fn(&ParamStore<f64>) -> f64,
    grads: impl Fn(&ParamStore<f64>) -> Gradients<f64>,
) -> (f64, usize) {
    let analytic = grads(store);
    let (mut worst, mut checked) = (0.0f64, 0);
    for &id in ids {
        let n = store.get(id).len();
        for k in 0..n {
            let original = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = original + H;
            let plus = loss(store);
            store.get_mut(id).data_mut()[k] = original - H;
            let minus = loss(store);
            store.get_mut(id).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            worst = worst.max(relative_error(a, numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn tiny_graph() -> SceneGraph {
    SceneGraph::new(
        "g",
        vec![
            ObjectNode::new("dog", vec!["red".into()]),
            ObjectNode::new("table", vec![]),
            ObjectNode::new("cup", vec!["small".into(), "blue".into()]),
        ],
        vec![RelationEdge::new("near", 0, 1), RelationEdge::new("on top of", 2, 1)],
    )
    .unwrap()
}

/// Encoder at d = 4, T = 2 under the loss sum(rows * R) for a fixed random R.
pub fn encoder_gradient_error() -> (f64, usize) {
    let vocab = test_vocabulary();
    let config = EncoderConfig {
        embedding_dim: 3,
        lstm_hidden: 2,
        state_dim: 4,
        mlp_hidden: 4,
        iterations: 2,
        ..EncoderConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let enc = Encoder::new(&mut store, config, vocab.len(), &mut rng).unwrap();
    let g = tiny_graph();
    let q = vocab.encode("what is the color of the cup");
    let batch = GraphBatch::new(&[&g], &[&q], &vocab).unwrap();
    let weights = Matrix::from_vec(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect());

    let run = |store: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let out = enc.encode_vars(&mut tape, store, &batch).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out.rows, w);
        let loss = tape.sum_all(prod);
        (tape, loss)
    };
    let (worst, checked) = worst_error(
        &mut store,
        &enc.params(),
        |s| {
            let (tape, loss) = run(s);
            tape.scalar(loss)
        },
        |s| {
            let (tape, loss) = run(s);
            tape.backward(loss)
        },
    );
    (worst, checked)
}

/// MAC head at d = 4, p = 2 under cross-entropy.
pub fn mac_gradient_error() -> (f64, usize) {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let config = MacConfig {
        steps: 2,
        memory_dim: 4,
        control_dim: 4,
    };
    let head = MacHead::new(&mut store, "mac", config, 4, 4, 4, 3, &mut rng).unwrap();
    let mut random = |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
    let question = QuestionEmbedding::from_token_states(random(3, 4)).unwrap();
    let kb = random(4, 4);
    let mask = [true, true, false, true];

    let run = |store: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let q = question.to_vars(&mut tape);
        let (kbv, _) = KbVars::single(&mut tape, &kb, &mask).unwrap();
        let out = head.forward(&mut tape, store, &q, &kbv).unwrap();
        let loss = tape.cross_entropy(out.logits, vec![1].into());
        (tape, loss)
    };
    let (worst, checked) = worst_error(
        &mut store,
        &head.params(),
        |s| {
            let (tape, loss) = run(s);
            tape.scalar(loss)
        },
        |s| {
            let (tape, loss) = run(s);
            tape.backward(loss)
        },
    );
    (worst, checked)
}

/// Every parameter of a tiny SGMAC model, encoder included.
pub fn sgmac_gradient_error() -> (f64, usize) {
    let vocab = test_vocabulary();
    let answers = AnswerVocabulary::build(["red", "blue", "table"]).unwrap();
    let config = ModelConfig {
        kind: ModelKind::SgMac,
        encoder: EncoderConfig {
            embedding_dim: 3,
            lstm_hidden: 2,
            state_dim: 4,
            mlp_hidden: 4,
            iterations: 1,
            ..EncoderConfig::default()
        },
        question_hidden: 2,
        hidden: 4,
        mac: MacConfig {
            steps: 2,
            memory_dim: 4,
            control_dim: 3,
        },
        ..ModelConfig::default()
    };
    let mut model = QaModel::<f64>::new(config, vocab.clone(), answers, 2).unwrap();
    let graph = tiny_graph();
    let samples: Vec<QuestionSample> = [("what is on top of the table", 2), ("what is the color of the dog", 0)]
        .iter()
        .enumerate()
        .map(|(i, (text, answer))| QuestionSample {
            question_id: format!("q{i}"),
            tokens: vocab.encode(text),
            image_id: "g".into(),
            answer: Some(*answer),
            semantic_type: SemanticType::Relation,
        })
        .collect();
    let examples: Vec<Example<'_>> = samples.iter().map(|s| Example::new(s).with_graph(&graph)).collect();
    let batch: Vec<&Example<'_>> = examples.iter().collect();
    let ids: Vec<ParamId> = model.store.ids().collect();

    let run = |store: &ParamStore<f64>| {
        let m = QaModel {
            store: store.clone(),
            ..model.clone()
        };
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &batch).unwrap();
        let loss = tape.cross_entropy(out.logits, vec![2, 0].into());
        (tape, loss)
    };
    let mut store = model.store.clone();
    let (worst, checked) = worst_error(
        &mut store,
        &ids,
        |s| {
            let (tape, loss) = run(s);
            tape.scalar(loss)
        },
        |s| {
            let (tape, loss) = run(s);
            tape.backward(loss)
        },
    );
    model.store = store;
    (worst, checked)
}

pub fn encoder<T: sgvqa::tensor::Scalar>(config: EncoderConfig, vocab_size: usize, seed: u64) -> (Encoder, ParamStore<T>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = Encoder::new(&mut store, config, vocab_size, &mut rng).unwrap();
    (enc, store)
}

fn fill(store: &mut ParamStore<f64>, id: ParamId, f: impl Fn(usize, usize) -> f64) {
    let m = store.get_mut(id);
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            m.set(i, j, f(i, j));
        }
    }
}

/// Largest deviation of one round on two nodes and one edge from values
/// worked out by hand. Every update sums its inputs block-wise:
/// e' = e + v_r + v_s + u, v' = agg + v + u, u' = mean(E') + mean(V') + u.
pub fn hand_computed_round_error() -> f64 {
    let config = EncoderConfig {
        embedding_dim: 2,
        lstm_hidden: 1,
        state_dim: 2,
        mlp_hidden: 2,
        iterations: 1,
        share_sequence_encoder: true,
        activation: Activation::Identity,
    };
    let (enc, mut store) = encoder::<f64>(config, 4, 0);
    for net in [enc.edge_net, enc.node_net, enc.global_net] {
        fill(&mut store, net.hidden.weight, |i, j| f64::from(u8::from(i % 2 == j)));
        fill(&mut store, net.hidden.bias, |_, _| 0.0);
        fill(&mut store, net.output.weight, |i, j| f64::from(u8::from(i == j)));
        fill(&mut store, net.output.bias, |_, _| 0.0);
    }
    let state = GraphState {
        edge_vectors: Matrix::from_rows(&[vec![1.0, 1.0]]),
        node_vectors: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
        global: vec![0.5, 0.5],
        senders: vec![0],
        receivers: vec![1],
    };
    let out = gn_iterate(&state, &enc, &store, 1).unwrap();
    let got = [out.edge_vectors.row(0), out.node_vectors.row(0), out.node_vectors.row(1), &out.global[..]].concat();
    let want = [2.5, 2.5, 1.5, 0.5, 3.0, 4.0, 5.25, 5.25];
    got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Whether nodes with no incoming rows aggregate to exactly zero.
pub fn empty_segments_are_zero() -> bool {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]));
    let m = tape.segment_mean(x, Arc::from(vec![1, 1]), 3);
    let out = tape.value(m);
    out.row(0) == [0.0, 0.0] && out.row(2) == [0.0, 0.0] && out.row(1) == [0.875, 0.5]
}

pub fn small_encoder_config(iterations: usize) -> EncoderConfig {
    EncoderConfig {
        embedding_dim: 6,
        lstm_hidden: 3,
        state_dim: 4,
        mlp_hidden: 5,
        iterations,
        share_sequence_encoder: true,
        activation: Activation::Relu,
    }
}

/// Largest change of any node row (matched through the permutation) or of
/// the global row when the nodes of `g` are listed in `order`.
pub fn permutation_error(g: &SceneGraph, order: &[usize], seed: u64) -> f64 {
    let vocab = test_vocabulary();
    let q = vocab.encode("what is the color of the dog");
    let (enc, store) = encoder::<f32>(small_encoder_config(3), vocab.len(), seed);
    let base = encode(g, &q, &vocab, &enc, &store).unwrap();
    let perm = encode(&g.permuted(order).unwrap(), &q, &vocab, &enc, &store).unwrap();
    let n = g.node_count();
    let pairs = order.iter().enumerate().map(|(new, &old)| (new, old)).chain([(n, n)]);
    let mut worst = 0.0f64;
    for (new, old) in pairs {
        for (a, b) in perm.rows.row(new).iter().zip(base.rows.row(old)) {
            worst = worst.max(f64::from((a - b).abs()));
        }
    }
    worst
}
