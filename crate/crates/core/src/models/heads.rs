//! Answer heads over a question embedding and an optional knowledge base.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, BiLstm, Linear, Mlp};
use crate::tensor::{Matrix, ParamId, ParamStore, Scalar, Tape, Var};

/// Trainable question encoder: shared embedding plus a bidirectional LSTM.
/// The pooled vector `B` is the mean of the contextual token states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionEncoder {
    pub embedding: ParamId,
    pub lstm: BiLstm,
}

/// Question vectors of a batch on a tape.
#[derive(Debug, Clone)]
pub struct QuestionVars {
    /// `b x q`
    pub pooled: Var,
    /// `sum(len) x q`
    pub tokens: Var,
    pub token_segments: Arc<[usize]>,
    pub count: usize,
}

impl QuestionEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, embedding: ParamId, hidden: usize, rng: &mut impl Rng) -> Self {
        let input = store.get(embedding).cols();
        Self {
            embedding,
            lstm: BiLstm::new(store, "question", input, hidden, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.lstm.output_dim()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.lstm.params()
    }

    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, questions: &[Vec<u32>]) -> QuestionVars {
        let emb = tape.param(store, self.embedding);
        let enc = self.lstm.encode(tape, store, emb, questions, true);
        let tokens = enc.tokens.expect("token states requested");
        let pooled = tape.segment_mean(tokens, enc.token_segments.clone(), questions.len());
        QuestionVars {
            pooled,
            tokens,
            token_segments: enc.token_segments,
            count: questions.len(),
        }
    }

    /// Value-level embedding of one question.
    pub fn embed<T: Scalar>(&self, store: &ParamStore<T>, question: &[u32]) -> Result<QuestionEmbedding<T>> {
        if question.is_empty() {
            return Err(Error::Empty("question has no tokens".into()));
        }
        let mut tape = Tape::new();
        let q = self.encode(&mut tape, store, &[question.to_vec()]);
        Ok(QuestionEmbedding {
            pooled: tape.value(q.pooled).row(0).to_vec(),
            token_states: tape.value(q.tokens).clone(),
        })
    }
}

/// Pooled vector `B` and the token states it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionEmbedding<T> {
    pub pooled: Vec<T>,
    pub token_states: Matrix<T>,
}

impl<T: Scalar> QuestionEmbedding<T> {
    pub fn from_token_states(token_states: Matrix<T>) -> Result<Self> {
        let n = token_states.rows();
        if n == 0 {
            return Err(Error::Empty("question has no token states".into()));
        }
        let mut pooled = vec![T::zero(); token_states.cols()];
        for i in 0..n {
            for (p, &v) in pooled.iter_mut().zip(token_states.row(i)) {
                *p = *p + v;
            }
        }
        let inv = T::one() / T::lit(n as f64);
        pooled.iter_mut().for_each(|p| *p = *p * inv);
        Ok(Self { pooled, token_states })
    }

    /// Places the embedding on a tape as a batch of one.
    pub fn to_vars(&self, tape: &mut Tape<T>) -> QuestionVars {
        let n = self.token_states.rows();
        QuestionVars {
            pooled: tape.constant(Matrix::row_vector(self.pooled.clone())),
            tokens: tape.constant(self.token_states.clone()),
            token_segments: vec![0; n].into(),
            count: 1,
        }
    }
}

/// Rows of a knowledge base (scene-graph encoding or object features) for a
/// batch, with the owning sample of each row. Masked rows never reach the tape.
#[derive(Debug, Clone)]
pub struct KbVars {
    pub rows: Var,
    pub segments: Arc<[usize]>,
    pub count: usize,
}

impl KbVars {
    pub fn new(rows: Var, segments: Arc<[usize]>, count: usize) -> Result<Self> {
        let mut seen = vec![false; count];
        for &s in segments.iter() {
            seen[s] = true;
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::Empty(format!("sample {i} has no attendable knowledge-base rows")));
        }
        Ok(Self { rows, segments, count })
    }

    /// Places the unmasked rows of `rows` on a tape as a batch of one.
    /// Returns the kept row positions alongside.
    pub fn single<T: Scalar>(tape: &mut Tape<T>, rows: &Matrix<T>, mask: &[bool]) -> Result<(Self, Vec<usize>)> {
        if mask.len() != rows.rows() {
            return Err(Error::Shape(format!("{} mask entries for {} rows", mask.len(), rows.rows())));
        }
        let live: Vec<usize> = (0..rows.rows()).filter(|&i| mask[i]).collect();
        let mut kept = Matrix::zeros(live.len(), rows.cols());
        for (r, &i) in live.iter().enumerate() {
            kept.row_mut(r).copy_from_slice(rows.row(i));
        }
        let var = tape.constant(kept);
        let kb = Self::new(var, vec![0; live.len()].into(), 1)?;
        Ok((kb, live))
    }
}

/// Expands attention weights over kept rows back to the full row count,
/// placing zeros on masked rows.
pub fn expand_weights<T: Scalar>(weights: &Matrix<T>, live: &[usize], total: usize) -> Vec<T> {
    let mut out = vec![T::zero(); total];
    for (r, &i) in live.iter().enumerate() {
        out[i] = weights.data()[r];
    }
    out
}

fn check_width<T: Scalar>(tape: &Tape<T>, v: Var, expected: usize, what: &str) -> Result<()> {
    let found = tape.value(v).cols();
    if found != expected {
        return Err(Error::Shape(format!("{what} has width {found}, expected {expected}")));
    }
    Ok(())
}

/// Two fully-connected layers with a rectifier after each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub mlp: Mlp,
}

impl Branch {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(store, name, (input, width, width), Activation::Relu, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        check_width(tape, x, self.mlp.hidden.in_dim, "branch input")?;
        let h = self.mlp.forward(tape, store, x);
        Ok(tape.relu(h))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.mlp.params()
    }
}

/// Two-layer classifier: fully-connected, rectifier, answer logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classifier {
    pub mlp: Mlp,
}

impl Classifier {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        answers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            mlp: Mlp::new(store, name, (input, hidden, answers), Activation::Relu, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        self.mlp.forward(tape, store, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.mlp.params()
    }
}

/// Question branch and image branch, concatenated and classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcatHead {
    pub question: Branch,
    pub image: Branch,
    pub classifier: Classifier,
}

#[derive(Debug, Clone, Copy)]
pub struct ConcatOut {
    pub logits: Var,
    pub question_hidden: Var,
    pub image_hidden: Var,
}

impl ConcatHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        question_dim: usize,
        image_dim: usize,
        width: usize,
        hidden: usize,
        answers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            question: Branch::new(store, "concat.question", question_dim, width, rng),
            image: Branch::new(store, "concat.image", image_dim, width, rng),
            classifier: Classifier::new(store, "concat.classifier", 2 * width, hidden, answers, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, question: Var, image: Var) -> Result<ConcatOut> {
        let question_hidden = self.question.forward(tape, store, question)?;
        let image_hidden = self.image.forward(tape, store, image)?;
        let joined = tape.concat_cols(&[question_hidden, image_hidden]);
        Ok(ConcatOut {
            logits: self.classifier.forward(tape, store, joined),
            question_hidden,
            image_hidden,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.question.params(), self.image.params(), self.classifier.params()].concat()
    }
}

/// A single input branch followed by the classifier (text-only or image-only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnimodalHead {
    pub branch: Branch,
    pub classifier: Classifier,
}

impl UnimodalHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        width: usize,
        hidden: usize,
        answers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            branch: Branch::new(store, &format!("{name}.branch"), input, width, rng),
            classifier: Classifier::new(store, &format!("{name}.classifier"), width, hidden, answers, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.branch.forward(tape, store, x)?;
        Ok(self.classifier.forward(tape, store, h))
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.branch.params(), self.classifier.params()].concat()
    }
}

/// Single-head scaled dot-product attention: the projected question queries
/// the projected knowledge-base rows, which serve as keys and values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnHead {
    pub query: Linear,
    pub key: Linear,
    pub classifier: Classifier,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnOut {
    pub logits: Var,
    /// One weight per knowledge-base row.
    pub weights: Var,
}

impl AttnHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        (question_dim, kb_dim, attn_dim): (usize, usize, usize),
        hidden: usize,
        answers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), question_dim, attn_dim, rng),
            key: Linear::new(store, &format!("{name}.key"), kb_dim, attn_dim, rng),
            classifier: Classifier::new(store, &format!("{name}.classifier"), attn_dim + question_dim, hidden, answers, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, q: &QuestionVars, kb: &KbVars) -> Result<AttnOut> {
        check_width(tape, q.pooled, self.query.in_dim, "question vector")?;
        check_width(tape, kb.rows, self.key.in_dim, "knowledge base")?;
        let query = self.query.forward(tape, store, q.pooled);
        let keys = self.key.forward(tape, store, kb.rows);
        let per_row = tape.gather_rows(query, kb.segments.clone());
        let prod = tape.mul(per_row, keys);
        let scores = tape.row_sum(prod);
        let scores = tape.scale(scores, T::lit(1.0 / (self.key.out_dim as f64).sqrt()));
        let weights = tape.segment_softmax(scores, kb.segments.clone(), kb.count);
        let weighted = tape.mul_col(keys, weights);
        let attended = tape.segment_sum(weighted, kb.segments.clone(), kb.count);
        let joined = tape.concat_cols(&[attended, q.pooled]);
        Ok(AttnOut {
            logits: self.classifier.forward(tape, store, joined),
            weights,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.query.params().to_vec(), self.key.params().to_vec(), self.classifier.params()].concat()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacConfig {
    pub steps: usize,
    pub memory_dim: usize,
    pub control_dim: usize,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            memory_dim: 512,
            control_dim: 512,
        }
    }
}

impl MacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("mac.steps must be at least 1".into()));
        }
        if self.memory_dim == 0 || self.control_dim == 0 {
            return Err(Error::Config("mac dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Simplified MAC cell: per step a control unit attends over question
/// tokens, a read unit attends over knowledge-base rows given control and
/// memory, and a write unit folds the retrieved vector into memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacHead {
    pub config: MacConfig,
    pub initial_control: ParamId,
    pub initial_memory: ParamId,
    /// Per-step projection of the pooled question.
    pub step_question: Vec<Linear>,
    pub control_merge: Linear,
    pub token_proj: Linear,
    pub kb_proj: Linear,
    pub read_merge: Linear,
    pub control_to_memory: Linear,
    pub read_score: Linear,
    pub write: Linear,
    pub classifier: Classifier,
}

#[derive(Debug, Clone)]
pub struct MacOut {
    pub logits: Var,
    /// `[m_p, B]`, the classifier input.
    pub hidden: Var,
    pub control_maps: Vec<Var>,
    pub read_maps: Vec<Var>,
}

impl MacHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        config: MacConfig,
        question_dim: usize,
        kb_dim: usize,
        hidden: usize,
        answers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (c, m) = (config.control_dim, config.memory_dim);
        let lin = |store: &mut ParamStore<T>, part: &str, i: usize, o: usize, rng: &mut _| Linear::new(store, &format!("{name}.{part}"), i, o, rng);
        Ok(Self {
            initial_control: store.add_normal(format!("{name}.c0"), 1, c, 0.1, rng),
            initial_memory: store.add_normal(format!("{name}.m0"), 1, m, 0.1, rng),
            step_question: (0..config.steps)
                .map(|i| lin(store, &format!("q{i}"), question_dim, c, rng))
                .collect(),
            control_merge: lin(store, "control_merge", 2 * c, c, rng),
            token_proj: lin(store, "token_proj", question_dim, c, rng),
            kb_proj: lin(store, "kb_proj", kb_dim, m, rng),
            read_merge: lin(store, "read_merge", 2 * m, m, rng),
            control_to_memory: lin(store, "control_to_memory", c, m, rng),
            read_score: lin(store, "read_score", m, 1, rng),
            write: lin(store, "write", 2 * m, m, rng),
            classifier: Classifier::new(store, &format!("{name}.classifier"), m + question_dim, hidden, answers, rng),
            config,
        })
    }

    /// Width of [`MacOut::hidden`].
    pub fn hidden_width(&self) -> usize {
        self.config.memory_dim + self.token_proj.in_dim
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, q: &QuestionVars, kb: &KbVars) -> Result<MacOut> {
        check_width(tape, q.pooled, self.token_proj.in_dim, "question vector")?;
        check_width(tape, kb.rows, self.kb_proj.in_dim, "knowledge base")?;
        let b = q.count;
        let broadcast: Arc<[usize]> = vec![0; b].into();
        let c0 = tape.param(store, self.initial_control);
        let m0 = tape.param(store, self.initial_memory);
        let mut control = tape.gather_rows(c0, broadcast.clone());
        let mut memory = tape.gather_rows(m0, broadcast);

        let tokens = self.token_proj.forward(tape, store, q.tokens);
        let knowledge = self.kb_proj.forward(tape, store, kb.rows);
        let c_scale = T::lit(1.0 / (self.config.control_dim as f64).sqrt());

        let mut control_maps = Vec::with_capacity(self.config.steps);
        let mut read_maps = Vec::with_capacity(self.config.steps);
        for step in &self.step_question {
            // control: attend over question tokens
            let q_step = step.forward(tape, store, q.pooled);
            let joined = tape.concat_cols(&[control, q_step]);
            let cq = self.control_merge.forward(tape, store, joined);
            let cq_tok = tape.gather_rows(cq, q.token_segments.clone());
            let prod = tape.mul(cq_tok, tokens);
            let scores = tape.row_sum(prod);
            let scores = tape.scale(scores, c_scale);
            let cw = tape.segment_softmax(scores, q.token_segments.clone(), b);
            let weighted = tape.mul_col(tokens, cw);
            control = tape.segment_sum(weighted, q.token_segments.clone(), b);

            // read: attend over knowledge-base rows given memory and control
            let mem_rows = tape.gather_rows(memory, kb.segments.clone());
            let interaction = tape.mul(mem_rows, knowledge);
            let joined = tape.concat_cols(&[interaction, knowledge]);
            let merged = self.read_merge.forward(tape, store, joined);
            let ctrl = self.control_to_memory.forward(tape, store, control);
            let ctrl_rows = tape.gather_rows(ctrl, kb.segments.clone());
            let gated = tape.mul(ctrl_rows, merged);
            let scores = self.read_score.forward(tape, store, gated);
            let rw = tape.segment_softmax(scores, kb.segments.clone(), kb.count);
            let weighted = tape.mul_col(knowledge, rw);
            let retrieved = tape.segment_sum(weighted, kb.segments.clone(), kb.count);

            // write
            let joined = tape.concat_cols(&[retrieved, memory]);
            memory = self.write.forward(tape, store, joined);

            control_maps.push(cw);
            read_maps.push(rw);
        }
        let hidden = tape.concat_cols(&[memory, q.pooled]);
        Ok(MacOut {
            logits: self.classifier.forward(tape, store, hidden),
            hidden,
            control_maps,
            read_maps,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.initial_control, self.initial_memory];
        for l in &self.step_question {
            p.extend(l.params());
        }
        for l in [
            &self.control_merge,
            &self.token_proj,
            &self.kb_proj,
            &self.read_merge,
            &self.control_to_memory,
            &self.read_score,
            &self.write,
        ] {
            p.extend(l.params());
        }
        p.extend(self.classifier.params());
        p
    }
}

/// Two hidden vectors, each through its own fully-connected layer and
/// rectifier, concatenated and classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LateFusionHead {
    pub branch_a: Linear,
    pub branch_b: Linear,
    pub classifier: Linear,
}

impl LateFusionHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        (a_dim, b_dim): (usize, usize),
        width: usize,
        answers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            branch_a: Linear::new(store, "fusion.a", a_dim, width, rng),
            branch_b: Linear::new(store, "fusion.b", b_dim, width, rng),
            classifier: Linear::new(store, "fusion.classifier", 2 * width, answers, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, a: Var, b: Var) -> Result<Var> {
        check_width(tape, a, self.branch_a.in_dim, "fusion branch a")?;
        check_width(tape, b, self.branch_b.in_dim, "fusion branch b")?;
        let ha = self.branch_a.forward(tape, store, a);
        let ha = tape.relu(ha);
        let hb = self.branch_b.forward(tape, store, b);
        let hb = tape.relu(hb);
        let joined = tape.concat_cols(&[ha, hb]);
        Ok(self.classifier.forward(tape, store, joined))
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.branch_a.params(), self.branch_b.params(), self.classifier.params()].concat()
    }
}
