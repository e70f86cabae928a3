//! Graph Network scene-graph encoder.
//!
//! Node text (name words then attribute words), relation text and the
//! question are embedded and run through a bidirectional LSTM; the final
//! states, projected to the state width `d`, form the initial edge, node and
//! global vectors. The Graph Network then performs `T` rounds of
//! edge -> node -> global updates, each with its own two-layer perceptron:
//!
//! * edge:   `e'_k = mlp_e([e_k, v_{receiver(k)}, v_{sender(k)}, u])`
//! * node:   `v'_i = mlp_v([mean{e'_k : receiver(k) = i}, v_i, u])`
//! * global: `u'   = mlp_u([mean(E'), mean(V'), u])`
//!
//! The mean over an empty set of incoming edges is the zero vector. The
//! final node rows stacked above the global row form the [`SgeMatrix`].
//!
//! Many graphs are batched as a disjoint union; per-graph reductions use
//! segment ids, so no component of one graph ever reaches another.

mod pretrained;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SceneGraph, Vocabulary};
use crate::nn::{Activation, BiLstm, Linear, Mlp};
use crate::tensor::{Matrix, ParamId, ParamStore, Scalar, Tape, Var, EXCLUDED};

pub use pretrained::{load_word_vectors, parse_word_vectors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    /// Hidden width per LSTM direction.
    pub lstm_hidden: usize,
    /// Width `d` of edge, node and global vectors.
    pub state_dim: usize,
    pub mlp_hidden: usize,
    pub iterations: usize,
    /// One LSTM for node, edge and question text; otherwise three.
    pub share_sequence_encoder: bool,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 300,
            lstm_hidden: 150,
            state_dim: 300,
            mlp_hidden: 512,
            iterations: 3,
            share_sequence_encoder: true,
            activation: Activation::Relu,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("state_dim", self.state_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("iterations", self.iterations),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("encoder.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parameter handles of the encoder; the values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub embedding: ParamId,
    pub node_text: BiLstm,
    pub edge_text: BiLstm,
    pub question_text: BiLstm,
    pub projection: Linear,
    pub edge_net: Mlp,
    pub node_net: Mlp,
    pub global_net: Mlp,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: EncoderConfig, vocab_size: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let embedding = store.add_normal("encoder.embedding", vocab_size, config.embedding_dim, 0.3, rng);
        Self::with_embedding(store, config, vocab_size, embedding, rng)
    }

    /// Builds the encoder around an existing `vocab_size x embedding_dim` table.
    pub fn with_embedding<T: Scalar>(
        store: &mut ParamStore<T>,
        config: EncoderConfig,
        vocab_size: usize,
        embedding: ParamId,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (e, h, d, m) = (config.embedding_dim, config.lstm_hidden, config.state_dim, config.mlp_hidden);
        let node_text = BiLstm::new(store, "encoder.text", e, h, rng);
        let (edge_text, question_text) = if config.share_sequence_encoder {
            (node_text, node_text)
        } else {
            (
                BiLstm::new(store, "encoder.edge_text", e, h, rng),
                BiLstm::new(store, "encoder.question_text", e, h, rng),
            )
        };
        let projection = Linear::new(store, "encoder.projection", 2 * h, d, rng);
        let act = config.activation;
        let edge_net = Mlp::new(store, "encoder.edge_net", (4 * d, m, d), act, rng);
        let node_net = Mlp::new(store, "encoder.node_net", (3 * d, m, d), act, rng);
        let global_net = Mlp::new(store, "encoder.global_net", (3 * d, m, d), act, rng);
        Ok(Self {
            config,
            vocab_size,
            embedding,
            node_text,
            edge_text,
            question_text,
            projection,
            edge_net,
            node_net,
            global_net,
        })
    }

    /// Every parameter owned by the encoder, embedding included.
    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.embedding];
        p.extend(self.node_text.params());
        if !self.config.share_sequence_encoder {
            p.extend(self.edge_text.params());
            p.extend(self.question_text.params());
        }
        p.extend(self.projection.params());
        p.extend(self.edge_net.params());
        p.extend(self.node_net.params());
        p.extend(self.global_net.params());
        p
    }

    /// Initial graph vectors `(E_0, V_0, u_0)` for every graph of the batch.
    pub fn embed_vars<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, batch: &GraphBatch) -> Result<GraphVars> {
        batch.check_ids(self.vocab_size)?;
        let emb = tape.param(store, self.embedding);
        let nodes = self.node_text.encode(tape, store, emb, &batch.node_tokens, false).finals;
        let nodes = self.projection.forward(tape, store, nodes);
        let edges = self.edge_text.encode(tape, store, emb, &batch.edge_tokens, false).finals;
        let edges = self.projection.forward(tape, store, edges);
        let globals = self.question_text.encode(tape, store, emb, &batch.question_tokens, false).finals;
        let globals = self.projection.forward(tape, store, globals);
        tape.check_finite(nodes, "initial embedding")?;
        Ok(GraphVars { edges, nodes, globals })
    }

    /// `iterations` rounds of edge, node and global updates.
    pub fn iterate_vars<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        batch: &GraphBatch,
        state: GraphVars,
        iterations: usize,
    ) -> Result<GraphVars> {
        let GraphVars {
            mut edges,
            mut nodes,
            mut globals,
        } = state;
        let graphs = batch.graph_count();
        let node_count = batch.node_count();
        for round in 1..=iterations {
            let v_recv = tape.gather_rows(nodes, batch.receivers.clone());
            let v_send = tape.gather_rows(nodes, batch.senders.clone());
            let u_edge = tape.gather_rows(globals, batch.edge_graph.clone());
            let input = tape.concat_cols(&[edges, v_recv, v_send, u_edge]);
            let new_edges = self.edge_net.forward(tape, store, input);
            tape.check_finite(new_edges, format!("edge update (iteration {round})"))?;

            let incoming = tape.segment_mean(new_edges, batch.receivers.clone(), node_count);
            let u_node = tape.gather_rows(globals, batch.node_graph.clone());
            let input = tape.concat_cols(&[incoming, nodes, u_node]);
            let new_nodes = self.node_net.forward(tape, store, input);
            tape.check_finite(new_nodes, format!("node update (iteration {round})"))?;

            let edge_mean = tape.segment_mean(new_edges, batch.edge_graph.clone(), graphs);
            let node_mean = tape.segment_mean(new_nodes, batch.node_graph.clone(), graphs);
            let input = tape.concat_cols(&[edge_mean, node_mean, globals]);
            let new_globals = self.global_net.forward(tape, store, input);
            tape.check_finite(new_globals, format!("global update (iteration {round})"))?;

            edges = new_edges;
            nodes = new_nodes;
            globals = new_globals;
        }
        Ok(GraphVars { edges, nodes, globals })
    }

    /// Embeds, iterates `config.iterations` times and stacks node rows above
    /// the global row of each graph.
    pub fn encode_vars<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, batch: &GraphBatch) -> Result<StackedEncoding> {
        let state = self.embed_vars(tape, store, batch)?;
        let state = self.iterate_vars(tape, store, batch, state, self.config.iterations)?;
        let rows = tape.concat_rows(&[state.nodes, state.globals]);
        let segments: Arc<[usize]> = batch
            .node_graph
            .iter()
            .copied()
            .chain(0..batch.graph_count())
            .collect();
        Ok(StackedEncoding {
            rows,
            segments,
            graphs: batch.graph_count(),
        })
    }
}

/// Edge, node and global vectors of a batch recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GraphVars {
    pub edges: Var,
    pub nodes: Var,
    pub globals: Var,
}

/// Stacked node and global rows for a batch, with the owning graph of every row.
#[derive(Debug, Clone)]
pub struct StackedEncoding {
    pub rows: Var,
    pub segments: Arc<[usize]>,
    pub graphs: usize,
}

/// Token ids and connectivity of several graphs laid out as one disjoint union.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub node_tokens: Vec<Vec<u32>>,
    pub edge_tokens: Vec<Vec<u32>>,
    pub question_tokens: Vec<Vec<u32>>,
    pub senders: Arc<[usize]>,
    pub receivers: Arc<[usize]>,
    pub node_graph: Arc<[usize]>,
    pub edge_graph: Arc<[usize]>,
    /// Offset of each graph's first node in the union.
    pub node_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&SceneGraph], questions: &[&[u32]], vocab: &Vocabulary) -> Result<Self> {
        if graphs.len() != questions.len() {
            return Err(Error::Shape(format!("{} graphs but {} questions", graphs.len(), questions.len())));
        }
        let mut b = GraphBatch {
            node_tokens: Vec::new(),
            edge_tokens: Vec::new(),
            question_tokens: Vec::with_capacity(questions.len()),
            senders: Arc::from(Vec::new()),
            receivers: Arc::from(Vec::new()),
            node_graph: Arc::from(Vec::new()),
            edge_graph: Arc::from(Vec::new()),
            node_offsets: Vec::with_capacity(graphs.len()),
        };
        let (mut senders, mut receivers, mut node_graph, mut edge_graph) = (vec![], vec![], vec![], vec![]);
        for (gi, (g, q)) in graphs.iter().zip(questions).enumerate() {
            if g.node_count() == 0 {
                return Err(Error::InvalidGraph(format!("graph '{}' has no nodes", g.image_id())));
            }
            if q.is_empty() {
                return Err(Error::Empty(format!("question for image '{}' has no tokens", g.image_id())));
            }
            let offset = b.node_tokens.len();
            b.node_offsets.push(offset);
            for node in g.nodes() {
                b.node_tokens.push(vocab.encode_words(&node.words()));
                node_graph.push(gi);
            }
            for e in g.edges() {
                b.edge_tokens.push(vocab.encode(&e.relation));
                senders.push(offset + e.source);
                receivers.push(offset + e.receiver);
                edge_graph.push(gi);
            }
            b.question_tokens.push(q.to_vec());
        }
        b.senders = senders.into();
        b.receivers = receivers.into();
        b.node_graph = node_graph.into();
        b.edge_graph = edge_graph.into();
        Ok(b)
    }

    pub fn graph_count(&self) -> usize {
        self.question_tokens.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_tokens.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_tokens.len()
    }

    fn check_ids(&self, vocab_size: usize) -> Result<()> {
        let all = self
            .node_tokens
            .iter()
            .chain(&self.edge_tokens)
            .chain(&self.question_tokens)
            .flatten();
        for &id in all {
            if id as usize >= vocab_size {
                return Err(Error::Vocabulary(format!("token id {id} outside vocabulary of size {vocab_size}")));
            }
        }
        Ok(())
    }
}

/// Edge, node and global vectors of one graph, with edge endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState<T> {
    pub edge_vectors: Matrix<T>,
    pub node_vectors: Matrix<T>,
    pub global: Vec<T>,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
}

/// Stacked node rows followed by the global row; `mask` marks real rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SgeMatrix<T> {
    pub rows: Matrix<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> SgeMatrix<T> {
    pub fn new(rows: Matrix<T>) -> Self {
        let mask = vec![true; rows.rows()];
        Self { rows, mask }
    }

    pub fn with_mask(rows: Matrix<T>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != rows.rows() {
            return Err(Error::Shape(format!("{} mask entries for {} rows", mask.len(), rows.rows())));
        }
        Ok(Self { rows, mask })
    }

    /// Pads with zero rows (masked out) up to `total` rows.
    pub fn padded(&self, total: usize) -> Self {
        let mut rows = Matrix::zeros(total.max(self.rows.rows()), self.rows.cols());
        rows.data_mut()[..self.rows.len()].copy_from_slice(self.rows.data());
        let mut mask = self.mask.clone();
        mask.resize(rows.rows(), false);
        Self { rows, mask }
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    /// Segment ids for a single-sample batch: 0 for live rows, excluded otherwise.
    pub fn segments(&self) -> Arc<[usize]> {
        self.mask.iter().map(|&m| if m { 0 } else { EXCLUDED }).collect()
    }
}

fn single_batch(g: &SceneGraph, question: &[u32], vocab: &Vocabulary) -> Result<GraphBatch> {
    GraphBatch::new(&[g], &[question], vocab)
}

/// Initial graph representation of one graph.
pub fn embed_graph<T: Scalar>(
    g: &SceneGraph,
    question: &[u32],
    vocab: &Vocabulary,
    encoder: &Encoder,
    store: &ParamStore<T>,
) -> Result<GraphState<T>> {
    let batch = single_batch(g, question, vocab)?;
    let mut tape = Tape::new();
    let vars = encoder.embed_vars(&mut tape, store, &batch)?;
    Ok(GraphState {
        edge_vectors: tape.value(vars.edges).clone(),
        node_vectors: tape.value(vars.nodes).clone(),
        global: tape.value(vars.globals).row(0).to_vec(),
        senders: batch.senders.to_vec(),
        receivers: batch.receivers.to_vec(),
    })
}

/// Runs `iterations` Graph Network rounds on an explicit state.
pub fn gn_iterate<T: Scalar>(state: &GraphState<T>, encoder: &Encoder, store: &ParamStore<T>, iterations: usize) -> Result<GraphState<T>> {
    let d = encoder.config.state_dim;
    let n = state.node_vectors.rows();
    let ne = state.edge_vectors.rows();
    if state.node_vectors.cols() != d || state.edge_vectors.cols() != d || state.global.len() != d {
        return Err(Error::Shape(format!("graph state vectors must have width {d}")));
    }
    if state.senders.len() != ne || state.receivers.len() != ne {
        return Err(Error::Shape("one sender and receiver per edge".into()));
    }
    if state.senders.iter().chain(&state.receivers).any(|&i| i >= n) {
        return Err(Error::InvalidGraph("edge endpoint outside node range".into()));
    }
    let batch = GraphBatch {
        node_tokens: vec![Vec::new(); n],
        edge_tokens: vec![Vec::new(); ne],
        question_tokens: vec![Vec::new()],
        senders: state.senders.clone().into(),
        receivers: state.receivers.clone().into(),
        node_graph: vec![0; n].into(),
        edge_graph: vec![0; ne].into(),
        node_offsets: vec![0],
    };
    let mut tape = Tape::new();
    let vars = GraphVars {
        edges: tape.constant(state.edge_vectors.clone()),
        nodes: tape.constant(state.node_vectors.clone()),
        globals: tape.constant(Matrix::row_vector(state.global.clone())),
    };
    let out = encoder.iterate_vars(&mut tape, store, &batch, vars, iterations)?;
    Ok(GraphState {
        edge_vectors: tape.value(out.edges).clone(),
        node_vectors: tape.value(out.nodes).clone(),
        global: tape.value(out.globals).row(0).to_vec(),
        senders: state.senders.clone(),
        receivers: state.receivers.clone(),
    })
}

/// Full encoding of one graph into its [`SgeMatrix`] (`N^v + 1` rows).
pub fn encode<T: Scalar>(
    g: &SceneGraph,
    question: &[u32],
    vocab: &Vocabulary,
    encoder: &Encoder,
    store: &ParamStore<T>,
) -> Result<SgeMatrix<T>> {
    let batch = single_batch(g, question, vocab)?;
    let mut tape = Tape::new();
    let stacked = encoder.encode_vars(&mut tape, store, &batch)?;
    Ok(SgeMatrix::new(tape.value(stacked.rows).clone()))
}
