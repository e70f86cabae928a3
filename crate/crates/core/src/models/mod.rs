//! Question-answering models: baselines over image features, scene-graph
//! heads over the Graph Network encoding, and late fusion.

mod checkpoint;
mod heads;
mod predict;
mod train;

use std::borrow::Cow;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, GraphBatch, SgeMatrix};
use crate::error::{Error, Result};
use crate::features::ImageFeatures;
use crate::graph::{SceneGraph, Vocabulary};
use crate::question::{AnswerVocabulary, QuestionSample, SemanticType};
use crate::tensor::{Matrix, ParamId, ParamStore, Scalar, Tape, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamShape};
pub use heads::{
    expand_weights, AttnHead, AttnOut, Branch, Classifier, ConcatHead, ConcatOut, KbVars, LateFusionHead, MacConfig,
    MacHead, MacOut, QuestionEmbedding, QuestionEncoder, QuestionVars, UnimodalHead,
};
pub use predict::{predictions_to_jsonl, read_predictions, write_predictions, Prediction};
pub use train::{derive_seed, evaluate, train, LogRecord, TrainOptions, TrainReport};

/// Logits and their softmax, computed in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDistribution {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl AnswerDistribution {
    pub fn from_logits<T: Scalar>(logits: &[T]) -> Self {
        let logits: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        Self {
            probabilities: exp.iter().map(|e| e / sum).collect(),
            logits,
        }
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &z) in self.logits.iter().enumerate() {
            if z > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

/// Object feature rows of one image with a row mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFeatureSet<T> {
    pub objects: Matrix<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> ObjectFeatureSet<T> {
    pub fn new(objects: Matrix<T>) -> Self {
        let mask = vec![true; objects.rows()];
        Self { objects, mask }
    }
}

/// Anything attention can read: rows plus a mask of live rows.
pub trait KnowledgeBase<T> {
    fn kb_rows(&self) -> &Matrix<T>;
    fn kb_mask(&self) -> &[bool];
}

impl<T> KnowledgeBase<T> for SgeMatrix<T> {
    fn kb_rows(&self) -> &Matrix<T> {
        &self.rows
    }
    fn kb_mask(&self) -> &[bool] {
        &self.mask
    }
}

impl<T> KnowledgeBase<T> for ObjectFeatureSet<T> {
    fn kb_rows(&self) -> &Matrix<T> {
        &self.objects
    }
    fn kb_mask(&self) -> &[bool] {
        &self.mask
    }
}

fn single_row<T: Scalar>(tape: &mut Tape<T>, v: &[T]) -> Var {
    tape.constant(Matrix::row_vector(v.to_vec()))
}

fn distribution<T: Scalar>(tape: &Tape<T>, logits: Var) -> AnswerDistribution {
    AnswerDistribution::from_logits(tape.value(logits).row(0))
}

/// CONCAT baseline on one sample: question vector `B` and spatial vector `S`.
pub fn concat_forward<T: Scalar>(head: &ConcatHead, store: &ParamStore<T>, question: &[T], spatial: &[T]) -> Result<AnswerDistribution> {
    let mut tape = Tape::new();
    let (b, s) = (single_row(&mut tape, question), single_row(&mut tape, spatial));
    let out = head.forward(&mut tape, store, b, s)?;
    Ok(distribution(&tape, out.logits))
}

/// Attention head on one sample. Returns the distribution and one weight per
/// knowledge-base row (zero on masked rows).
pub fn attn_forward<T: Scalar>(
    head: &AttnHead,
    store: &ParamStore<T>,
    question: &QuestionEmbedding<T>,
    kb: &impl KnowledgeBase<T>,
) -> Result<(AnswerDistribution, Vec<T>)> {
    let mut tape = Tape::new();
    let q = question.to_vars(&mut tape);
    let (kbv, live) = KbVars::single(&mut tape, kb.kb_rows(), kb.kb_mask())?;
    let out = head.forward(&mut tape, store, &q, &kbv)?;
    let weights = expand_weights(tape.value(out.weights), &live, kb.kb_rows().rows());
    Ok((distribution(&tape, out.logits), weights))
}

/// Per-step attention maps of a MAC run.
#[derive(Debug, Clone, PartialEq)]
pub struct MacTrace<T> {
    pub distribution: AnswerDistribution,
    pub control_maps: Vec<Vec<T>>,
    pub read_maps: Vec<Vec<T>>,
    pub hidden: Vec<T>,
}

pub fn mac_forward<T: Scalar>(
    head: &MacHead,
    store: &ParamStore<T>,
    kb: &impl KnowledgeBase<T>,
    question: &QuestionEmbedding<T>,
) -> Result<MacTrace<T>> {
    let mut tape = Tape::new();
    let q = question.to_vars(&mut tape);
    let (kbv, live) = KbVars::single(&mut tape, kb.kb_rows(), kb.kb_mask())?;
    let out = head.forward(&mut tape, store, &q, &kbv)?;
    let total = kb.kb_rows().rows();
    Ok(MacTrace {
        distribution: distribution(&tape, out.logits),
        control_maps: out.control_maps.iter().map(|&v| tape.value(v).data().to_vec()).collect(),
        read_maps: out
            .read_maps
            .iter()
            .map(|&v| expand_weights(tape.value(v), &live, total))
            .collect(),
        hidden: tape.value(out.hidden).row(0).to_vec(),
    })
}

pub fn late_fusion<T: Scalar>(head: &LateFusionHead, store: &ParamStore<T>, a: &[T], b: &[T]) -> Result<AnswerDistribution> {
    let mut tape = Tape::new();
    let (av, bv) = (single_row(&mut tape, a), single_row(&mut tape, b));
    let logits = head.forward(&mut tape, store, av, bv)?;
    Ok(distribution(&tape, logits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Concat,
    TextOnly,
    ImageOnly,
    Attn,
    Mac,
    #[serde(rename = "sgattn")]
    SgAttn,
    #[serde(rename = "sgmac")]
    SgMac,
    LateFusion,
}

impl ModelKind {
    pub fn uses_graph(self) -> bool {
        matches!(self, ModelKind::SgAttn | ModelKind::SgMac | ModelKind::LateFusion)
    }

    pub fn uses_objects(self) -> bool {
        matches!(self, ModelKind::Attn | ModelKind::Mac)
    }

    pub fn uses_spatial(self) -> bool {
        matches!(self, ModelKind::Concat | ModelKind::ImageOnly)
    }

    pub fn uses_external(self) -> bool {
        self == ModelKind::LateFusion
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    /// Hidden width per direction of the question LSTM.
    pub question_hidden: usize,
    pub attn_dim: usize,
    /// Hidden width of the answer classifiers.
    pub hidden: usize,
    /// Per-branch width of the CONCAT and unimodal baselines.
    pub concat_width: usize,
    pub mac: MacConfig,
    pub fusion_width: usize,
    /// Keep the embedding and Graph Network fixed while training the head.
    pub freeze_encoder: bool,
    /// Dropout rate on question states and knowledge-base rows during training.
    pub dropout: f64,
    /// Keep word vectors fixed (e.g. when loaded from pretrained vectors).
    pub freeze_embedding: bool,
    pub object_dim: usize,
    pub spatial_dim: usize,
    pub external_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::SgMac,
            encoder: EncoderConfig::default(),
            question_hidden: 150,
            attn_dim: 512,
            hidden: 512,
            concat_width: 1024,
            mac: MacConfig::default(),
            fusion_width: 512,
            freeze_encoder: false,
            freeze_embedding: false,
            dropout: 0.0,
            object_dim: 0,
            spatial_dim: 0,
            external_dim: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.mac.validate()?;
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("model.{what} must be positive for {:?}", self.kind)))
            }
        };
        need(self.question_hidden > 0, "question_hidden")?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout {} is not in [0, 1)", self.dropout)));
        }
        need(self.attn_dim > 0 && self.hidden > 0 && self.concat_width > 0 && self.fusion_width > 0, "widths")?;
        need(!self.kind.uses_objects() || self.object_dim > 0, "object_dim")?;
        need(!self.kind.uses_spatial() || self.spatial_dim > 0, "spatial_dim")?;
        need(!self.kind.uses_external() || self.external_dim > 0, "external_dim")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Concat(ConcatHead),
    TextOnly(UnimodalHead),
    ImageOnly(UnimodalHead),
    Attn(AttnHead),
    Mac(MacHead),
    SgAttn(AttnHead),
    SgMac(MacHead),
    LateFusion { mac: MacHead, fusion: LateFusionHead },
}

/// Parameter handles of a whole model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub embedding: ParamId,
    pub question: QuestionEncoder,
    pub encoder: Option<Encoder>,
    pub head: Head,
}

impl Network {
    fn build<T: Scalar>(store: &mut ParamStore<T>, config: &ModelConfig, vocab_size: usize, answers: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let embedding = store.add_normal("embedding", vocab_size, config.encoder.embedding_dim, 0.3, rng);
        let question = QuestionEncoder::new(store, embedding, config.question_hidden, rng);
        let qd = question.width();
        let encoder = if config.kind.uses_graph() {
            Some(Encoder::with_embedding(store, config.encoder.clone(), vocab_size, embedding, rng)?)
        } else {
            None
        };
        let d = config.encoder.state_dim;
        let (w, h) = (config.concat_width, config.hidden);
        let head = match config.kind {
            ModelKind::Concat => Head::Concat(ConcatHead::new(store, qd, config.spatial_dim, w, h, answers, rng)),
            ModelKind::TextOnly => Head::TextOnly(UnimodalHead::new(store, "text_only", qd, w, h, answers, rng)),
            ModelKind::ImageOnly => {
                Head::ImageOnly(UnimodalHead::new(store, "image_only", config.spatial_dim, w, h, answers, rng))
            }
            ModelKind::Attn => Head::Attn(AttnHead::new(store, "attn", (qd, config.object_dim, config.attn_dim), h, answers, rng)),
            ModelKind::SgAttn => Head::SgAttn(AttnHead::new(store, "sgattn", (qd, d, config.attn_dim), h, answers, rng)),
            ModelKind::Mac => Head::Mac(MacHead::new(store, "mac", config.mac.clone(), qd, config.object_dim, h, answers, rng)?),
            ModelKind::SgMac => Head::SgMac(MacHead::new(store, "sgmac", config.mac.clone(), qd, d, h, answers, rng)?),
            ModelKind::LateFusion => {
                let mac = MacHead::new(store, "sgmac", config.mac.clone(), qd, d, h, answers, rng)?;
                let fusion = LateFusionHead::new(store, (mac.hidden_width(), config.external_dim), config.fusion_width, answers, rng);
                Head::LateFusion { mac, fusion }
            }
        };
        Ok(Self {
            embedding,
            question,
            encoder,
            head,
        })
    }

    /// Embedding plus Graph Network parameters.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        match &self.encoder {
            Some(e) => e.params(),
            None => vec![self.embedding],
        }
    }
}

/// One model input with its gold answer.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub question_id: &'a str,
    pub tokens: &'a [u32],
    pub answer: Option<usize>,
    pub semantic_type: SemanticType,
    pub graph: Option<Cow<'a, SceneGraph>>,
    pub image: Option<&'a ImageFeatures>,
    pub external: Option<&'a [f32]>,
}

impl<'a> Example<'a> {
    pub fn new(sample: &'a QuestionSample) -> Self {
        Self {
            question_id: &sample.question_id,
            tokens: &sample.tokens,
            answer: sample.answer,
            semantic_type: sample.semantic_type,
            graph: None,
            image: None,
            external: None,
        }
    }

    pub fn with_graph(mut self, g: &'a SceneGraph) -> Self {
        self.graph = Some(Cow::Borrowed(g));
        self
    }

    pub fn with_owned_graph(mut self, g: SceneGraph) -> Self {
        self.graph = Some(Cow::Owned(g));
        self
    }

    pub fn with_image(mut self, f: &'a ImageFeatures) -> Self {
        self.image = Some(f);
        self
    }

    pub fn with_external(mut self, v: &'a [f32]) -> Self {
        self.external = Some(v);
        self
    }
}

/// Tape outputs of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOut {
    pub logits: Var,
    pub read_maps: Vec<Var>,
}

/// A model: configuration, vocabularies, parameter values and handles.
#[derive(Debug, Clone, PartialEq)]
pub struct QaModel<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub answers: AnswerVocabulary,
    pub store: ParamStore<T>,
    pub net: Network,
}

impl<T: Scalar> QaModel<T> {
    pub fn new(config: ModelConfig, vocab: Vocabulary, answers: AnswerVocabulary, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::build(&mut store, &config, vocab.len(), answers.len(), seed)?;
        Ok(Self {
            config,
            vocab,
            answers,
            store,
            net,
        })
    }

    /// Refuses inputs tokenized with a different vocabulary.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        let (expected, found) = (self.vocab.hash(), vocab.hash());
        if expected != found {
            return Err(Error::VocabularyMismatch { expected, found });
        }
        Ok(())
    }

    /// Copies the embedding and Graph Network weights from another model
    /// (e.g. a trained SGMAC seeding SGATT). Returns the number copied.
    pub fn seed_encoder_from<U: Scalar>(&mut self, other: &QaModel<U>) -> Result<usize> {
        self.check_vocabulary(&other.vocab)?;
        let mut copied = 0;
        let ids: Vec<ParamId> = self.net.encoder_params();
        for id in ids {
            let name = self.store.name(id).to_string();
            let Some(src) = other.store.id(&name) else { continue };
            let src = other.store.get(src);
            let dst = self.store.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(Error::Shape(format!("parameter {name}: {:?} vs {:?}", src.shape(), dst.shape())));
            }
            *dst = src.cast();
            copied += 1;
        }
        Ok(copied)
    }

    fn spatial_matrix(&self, batch: &[&Example<'_>]) -> Result<Matrix<T>> {
        let rows = batch
            .iter()
            .map(|e| {
                let f = e
                    .image
                    .ok_or_else(|| Error::Feature(format!("question {} has no image features", e.question_id)))?;
                Ok(f.spatial.iter().map(|&v| T::lit(v as f64)).collect())
            })
            .collect::<Result<Vec<Vec<T>>>>()?;
        Ok(Matrix::from_rows(&rows))
    }

    fn object_kb(&self, tape: &mut Tape<T>, batch: &[&Example<'_>]) -> Result<KbVars> {
        let mut data = Vec::new();
        let mut segments = Vec::new();
        let mut width = None;
        for (i, e) in batch.iter().enumerate() {
            let f = e
                .image
                .ok_or_else(|| Error::Feature(format!("question {} has no image features", e.question_id)))?;
            if width.is_some_and(|w| w != f.objects.cols()) {
                return Err(Error::Shape("object features of different widths in one batch".into()));
            }
            width = Some(f.objects.cols());
            data.extend(f.objects.data().iter().map(|&v| T::lit(v as f64)));
            segments.extend(std::iter::repeat_n(i, f.objects.rows()));
        }
        let rows = Matrix::from_vec(segments.len(), width.unwrap_or(0), data);
        let rows = tape.constant(rows);
        let rows = tape.dropout(rows);
        KbVars::new(rows, segments.into(), batch.len())
    }

    fn graph_kb(&self, tape: &mut Tape<T>, batch: &[&Example<'_>]) -> Result<KbVars> {
        let encoder = self.net.encoder.as_ref().expect("graph models own an encoder");
        let graphs = batch
            .iter()
            .map(|e| {
                e.graph
                    .as_deref()
                    .ok_or_else(|| Error::InvalidGraph(format!("question {} has no scene graph", e.question_id)))
            })
            .collect::<Result<Vec<&SceneGraph>>>()?;
        let questions: Vec<&[u32]> = batch.iter().map(|e| e.tokens).collect();
        let gb = GraphBatch::new(&graphs, &questions, &self.vocab)?;
        let stacked = encoder.encode_vars(tape, &self.store, &gb)?;
        let rows = tape.dropout(stacked.rows);
        KbVars::new(rows, stacked.segments, stacked.graphs)
    }

    /// Batched forward pass on a tape.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &[&Example<'_>]) -> Result<ForwardOut> {
        if batch.is_empty() {
            return Err(Error::Empty("empty batch".into()));
        }
        if self.config.freeze_encoder {
            tape.freeze(self.net.encoder_params());
        }
        if self.config.freeze_embedding {
            tape.freeze(vec![self.net.embedding]);
        }
        let questions: Vec<Vec<u32>> = batch.iter().map(|e| e.tokens.to_vec()).collect();
        if let Some(e) = batch.iter().find(|e| e.tokens.is_empty()) {
            return Err(Error::Empty(format!("question {} has no tokens", e.question_id)));
        }
        let mut q = self.net.question.encode(tape, &self.store, &questions);
        q.pooled = tape.dropout(q.pooled);
        q.tokens = tape.dropout(q.tokens);
        let store = &self.store;
        let (logits, read_maps) = match &self.net.head {
            Head::Concat(h) => {
                let s = tape.constant(self.spatial_matrix(batch)?);
                (h.forward(tape, store, q.pooled, s)?.logits, vec![])
            }
            Head::TextOnly(h) => (h.forward(tape, store, q.pooled)?, vec![]),
            Head::ImageOnly(h) => {
                let s = tape.constant(self.spatial_matrix(batch)?);
                (h.forward(tape, store, s)?, vec![])
            }
            Head::Attn(h) => {
                let kb = self.object_kb(tape, batch)?;
                let out = h.forward(tape, store, &q, &kb)?;
                (out.logits, vec![out.weights])
            }
            Head::SgAttn(h) => {
                let kb = self.graph_kb(tape, batch)?;
                let out = h.forward(tape, store, &q, &kb)?;
                (out.logits, vec![out.weights])
            }
            Head::Mac(h) => {
                let kb = self.object_kb(tape, batch)?;
                let out = h.forward(tape, store, &q, &kb)?;
                (out.logits, out.read_maps)
            }
            Head::SgMac(h) => {
                let kb = self.graph_kb(tape, batch)?;
                let out = h.forward(tape, store, &q, &kb)?;
                (out.logits, out.read_maps)
            }
            Head::LateFusion { mac, fusion } => {
                let kb = self.graph_kb(tape, batch)?;
                let out = mac.forward(tape, store, &q, &kb)?;
                let rows = batch
                    .iter()
                    .map(|e| {
                        e.external
                            .map(|v| v.iter().map(|&x| T::lit(x as f64)).collect())
                            .ok_or_else(|| Error::Feature(format!("question {} has no external vector", e.question_id)))
                    })
                    .collect::<Result<Vec<Vec<T>>>>()?;
                let ext = tape.constant(Matrix::from_rows(&rows));
                (fusion.forward(tape, store, out.hidden, ext)?, out.read_maps)
            }
        };
        Ok(ForwardOut { logits, read_maps })
    }

    /// Answer distributions for `examples`, evaluated `batch_size` at a time.
    pub fn distributions(&self, examples: &[Example<'_>], batch_size: usize) -> Result<Vec<AnswerDistribution>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let refs: Vec<&Example<'_>> = chunk.iter().collect();
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &refs)?;
            let logits = tape.value(fwd.logits);
            for i in 0..logits.rows() {
                out.push(AnswerDistribution::from_logits(logits.row(i)));
            }
        }
        Ok(out)
    }

    /// Predicted answers with their probabilities.
    pub fn predict(&self, examples: &[Example<'_>], batch_size: usize) -> Result<Vec<Prediction>> {
        let dists = self.distributions(examples, batch_size)?;
        Ok(examples
            .iter()
            .zip(dists)
            .map(|(e, d)| {
                let i = d.argmax();
                Prediction {
                    question_id: e.question_id.to_string(),
                    answer: self.answers.answer(i).to_string(),
                    probability: d.probabilities[i],
                }
            })
            .collect())
    }

    /// Read-attention maps (one per reasoning step) of a single example,
    /// one weight per knowledge-base row.
    pub fn attention_maps(&self, example: &Example<'_>) -> Result<Vec<Vec<T>>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &[example])?;
        Ok(fwd.read_maps.iter().map(|&v| tape.value(v).data().to_vec()).collect())
    }
}

pub(crate) fn answer_targets(batch: &[&Example<'_>]) -> Option<Arc<[usize]>> {
    batch.iter().map(|e| e.answer).collect::<Option<Vec<_>>>().map(Into::into)
}
