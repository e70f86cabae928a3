//! Ground-truth to noisy training curriculum.
//!
//! Training starts on ground-truth graphs and, epoch by epoch, mixes in
//! components of the matching noisy graph. Each epoch carries a
//! `probability` (chance that a component class is noised for one example)
//! and a `proportion` (fraction of that class swapped when it is).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SceneGraph;
use crate::models::{derive_seed, train, Example, QaModel, TrainOptions, TrainReport};
use crate::question::QuestionSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    /// Swap individual nodes, edge endpoint pairs and relation names.
    ComponentSwap,
    /// Replace the whole graph with the noisy one.
    WholeGraphSwap,
    /// Train on ground-truth and noisy copies of every example.
    MixedDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub probability: f64,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub warmup_epochs: usize,
    /// One entry per epoch, warm-up included. Epochs past the end reuse the
    /// last entry.
    pub epochs: Vec<NoiseLevel>,
    pub mode: CurriculumMode,
}

impl CurriculumSchedule {
    /// A schedule with no noise at all.
    pub fn zeros(total_epochs: usize, mode: CurriculumMode) -> Self {
        Self {
            warmup_epochs: 0,
            epochs: vec![NoiseLevel::default(); total_epochs],
            mode,
        }
    }

    /// Noise for a 1-based epoch.
    pub fn at(&self, epoch: usize) -> NoiseLevel {
        if epoch == 0 || epoch <= self.warmup_epochs {
            return NoiseLevel::default();
        }
        self.epochs.get(epoch - 1).or(self.epochs.last()).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.epochs.iter().enumerate() {
            for (v, what) in [(n.probability, "probability"), (n.proportion, "proportion")] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("epoch {} {what} {v} is not in [0, 1]", i + 1)));
                }
            }
        }
        let ramp = self.epochs.iter().skip(self.warmup_epochs).collect::<Vec<_>>();
        for (k, w) in ramp.windows(2).enumerate() {
            if w[1].probability < w[0].probability || w[1].proportion < w[0].proportion {
                return Err(Error::Config(format!(
                    "schedule decreases at epoch {}",
                    self.warmup_epochs + k + 2
                )));
            }
        }
        Ok(())
    }
}

/// `warmup` noise-free epochs, then probability and proportion both rising
/// linearly from `start` to `end` over the remaining epochs.
pub fn schedule_linear(total_epochs: usize, warmup: usize, start: f64, end: f64, mode: CurriculumMode) -> Result<CurriculumSchedule> {
    if total_epochs <= warmup {
        return Err(Error::Config(format!(
            "a curriculum needs more than {warmup} epochs, got {total_epochs}"
        )));
    }
    if start > end {
        return Err(Error::Config(format!("ramp start {start} exceeds end {end}")));
    }
    let ramp = total_epochs - warmup;
    let mut epochs = vec![NoiseLevel::default(); warmup];
    for i in 0..ramp {
        let v = if ramp == 1 {
            end
        } else {
            start + (end - start) * i as f64 / (ramp - 1) as f64
        };
        epochs.push(NoiseLevel {
            probability: v,
            proportion: v,
        });
    }
    let schedule = CurriculumSchedule {
        warmup_epochs: warmup,
        epochs,
        mode,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Two warm-up epochs, then a 0.1 to 0.9 linear ramp.
pub fn schedule_default(total_epochs: usize) -> Result<CurriculumSchedule> {
    schedule_linear(total_epochs, 2, 0.1, 0.9, CurriculumMode::ComponentSwap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSwap {
    pub node: usize,
    pub noisy_node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePairSwap {
    pub edge: usize,
    pub noisy_edge: usize,
    /// Endpoints written into the edge, already mapped onto ground-truth nodes.
    pub source: usize,
    pub receiver: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSwap {
    pub edge: usize,
    pub noisy_edge: usize,
}

/// What one call of [`inject_noise`] changed. Edge indices refer to the
/// ground-truth graph's edge order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SwapTrace {
    pub nodes: Vec<NodeSwap>,
    pub edge_pairs: Vec<EdgePairSwap>,
    pub relations: Vec<RelationSwap>,
}

impl SwapTrace {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edge_pairs.is_empty() && self.relations.is_empty()
    }
}

fn swap_count(proportion: f64, count: usize) -> usize {
    ((proportion * count as f64 + 1e-9).floor() as usize).min(count)
}

/// Pairs every ground-truth node with a noisy node: equal names first (in
/// order), then a uniformly drawn unmatched noisy node, or any noisy node
/// once those run out.
fn align_nodes(gt: &SceneGraph, noisy: &SceneGraph, rng: &mut impl Rng) -> Vec<usize> {
    let mut used = vec![false; noisy.node_count()];
    let mut alignment = vec![usize::MAX; gt.node_count()];
    for (i, node) in gt.nodes().iter().enumerate() {
        if let Some(j) = (0..noisy.node_count()).find(|&j| !used[j] && noisy.nodes()[j].name == node.name) {
            used[j] = true;
            alignment[i] = j;
        }
    }
    for slot in alignment.iter_mut().filter(|a| **a == usize::MAX) {
        let free: Vec<usize> = (0..used.len()).filter(|&j| !used[j]).collect();
        *slot = if free.is_empty() {
            rng.random_range(0..noisy.node_count())
        } else {
            let j = free[rng.random_range(0..free.len())];
            used[j] = true;
            j
        };
    }
    alignment
}

/// Applies a trace to the ground-truth graph.
pub fn replay(gt: &SceneGraph, noisy: &SceneGraph, trace: &SwapTrace) -> Result<SceneGraph> {
    let (image_id, mut nodes, mut edges) = gt.clone().into_parts();
    let bad = |what: &str| Error::InvalidGraph(format!("swap trace refers to a missing {what}"));
    for s in &trace.nodes {
        let src = noisy.nodes().get(s.noisy_node).ok_or_else(|| bad("noisy node"))?;
        let dst = nodes.get_mut(s.node).ok_or_else(|| bad("node"))?;
        let keep_confidence = dst.confidence.is_some();
        *dst = src.clone();
        if !keep_confidence {
            dst.confidence = None;
            dst.attribute_confidences = None;
        }
    }
    for s in &trace.edge_pairs {
        noisy.edges().get(s.noisy_edge).ok_or_else(|| bad("noisy edge"))?;
        let e = edges.get_mut(s.edge).ok_or_else(|| bad("edge"))?;
        e.source = s.source;
        e.receiver = s.receiver;
    }
    for s in &trace.relations {
        let src = noisy.edges().get(s.noisy_edge).ok_or_else(|| bad("noisy edge"))?;
        edges.get_mut(s.edge).ok_or_else(|| bad("edge"))?.relation = src.relation.clone();
    }
    SceneGraph::new(image_id, nodes, edges)
}

/// Swaps ground-truth components for noisy ones. With chance
/// `probability` per component class (nodes, edge pairs, relations), the
/// floor of `proportion` times the class size is swapped, chosen uniformly.
pub fn inject_noise(
    gt: &SceneGraph,
    noisy: &SceneGraph,
    probability: f64,
    proportion: f64,
    rng: &mut impl Rng,
) -> Result<(SceneGraph, SwapTrace)> {
    if gt.image_id() != noisy.image_id() {
        return Err(Error::ImageMismatch {
            left: gt.image_id().into(),
            right: noisy.image_id().into(),
        });
    }
    for (v, what) in [(probability, "probability"), (proportion, "proportion")] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{what} {v} is not in [0, 1]")));
        }
    }
    if noisy.node_count() == 0 {
        return Ok((gt.clone(), SwapTrace::default()));
    }
    let swap_nodes = rng.random_bool(probability);
    let swap_pairs = rng.random_bool(probability);
    let swap_relations = rng.random_bool(probability);
    let mut trace = SwapTrace::default();
    let (nv, ne, noisy_ne) = (gt.node_count(), gt.edge_count(), noisy.edge_count());

    let alignment = if swap_nodes || (swap_pairs && noisy_ne > 0) {
        align_nodes(gt, noisy, rng)
    } else {
        Vec::new()
    };
    if swap_nodes {
        let mut chosen = sample(rng, nv, swap_count(proportion, nv)).into_vec();
        chosen.sort_unstable();
        trace.nodes = chosen
            .into_iter()
            .map(|node| NodeSwap {
                node,
                noisy_node: alignment[node],
            })
            .collect();
    }
    if swap_pairs && noisy_ne > 0 {
        let mut back: Vec<Option<usize>> = vec![None; noisy.node_count()];
        for (i, &j) in alignment.iter().enumerate() {
            back[j].get_or_insert(i);
        }
        let mut chosen = sample(rng, ne, swap_count(proportion, ne)).into_vec();
        chosen.sort_unstable();
        for edge in chosen {
            let noisy_edge = rng.random_range(0..noisy_ne);
            let e = &noisy.edges()[noisy_edge];
            let mut map = |j: usize| back[j].unwrap_or_else(|| rng.random_range(0..nv));
            let source = map(e.source);
            let receiver = map(e.receiver);
            trace.edge_pairs.push(EdgePairSwap {
                edge,
                noisy_edge,
                source,
                receiver,
            });
        }
    }
    if swap_relations && noisy_ne > 0 {
        let mut chosen = sample(rng, ne, swap_count(proportion, ne)).into_vec();
        chosen.sort_unstable();
        trace.relations = chosen
            .into_iter()
            .map(|edge| RelationSwap {
                edge,
                noisy_edge: rng.random_range(0..noisy_ne),
            })
            .collect();
    }
    let out = replay(gt, noisy, &trace)?;
    Ok((out, trace))
}

/// Training regimes, labelled as in the curriculum comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regime {
    Gt,
    Noisy,
    GtNoisy,
    Probabilistic,
    ProbabilisticFiltered,
    ProbabilisticComplete,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Gt,
        Regime::Noisy,
        Regime::GtNoisy,
        Regime::Probabilistic,
        Regime::ProbabilisticFiltered,
        Regime::ProbabilisticComplete,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Regime::Gt => "GT",
            Regime::Noisy => "Noisy",
            Regime::GtNoisy => "GT+Noisy",
            Regime::Probabilistic => "Probabilistic",
            Regime::ProbabilisticFiltered => "Probabilistic (Filtered)",
            Regime::ProbabilisticComplete => "Probabilistic (Complete)",
        }
    }

    /// How the regime mixes graphs; `None` for single-source training.
    pub fn mode(self) -> Option<CurriculumMode> {
        match self {
            Regime::Gt | Regime::Noisy => None,
            Regime::GtNoisy => Some(CurriculumMode::MixedDataset),
            Regime::Probabilistic => Some(CurriculumMode::WholeGraphSwap),
            Regime::ProbabilisticFiltered | Regime::ProbabilisticComplete => Some(CurriculumMode::ComponentSwap),
        }
    }

    /// Whether noisy graphs are top-k filtered before use.
    pub fn filters_noisy(self) -> bool {
        self == Regime::ProbabilisticFiltered
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .to_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '+')
            .collect();
        Ok(match key.as_str() {
            "gt" => Regime::Gt,
            "noisy" => Regime::Noisy,
            "gt+noisy" | "gtnoisy" | "mixed" => Regime::GtNoisy,
            "probabilistic" => Regime::Probabilistic,
            "probabilisticfiltered" => Regime::ProbabilisticFiltered,
            "probabilisticcomplete" => Regime::ProbabilisticComplete,
            _ => return Err(Error::Config(format!("unknown regime '{s}'"))),
        })
    }
}

impl TryFrom<String> for Regime {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> Self {
        r.label().to_string()
    }
}

/// Training graphs for a curriculum run.
#[derive(Debug, Clone, Copy)]
pub struct PairedGraphs<'a> {
    pub gt: &'a BTreeMap<String, SceneGraph>,
    pub noisy: &'a BTreeMap<String, SceneGraph>,
}

impl PairedGraphs<'_> {
    /// Errors with every training image that lacks a graph of either kind.
    pub fn check(&self, samples: &[QuestionSample]) -> Result<()> {
        let missing: BTreeSet<String> = samples
            .iter()
            .filter(|s| !self.noisy.contains_key(&s.image_id))
            .map(|s| s.image_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingNoisy(missing.into_iter().collect()));
        }
        if let Some(s) = samples.iter().find(|s| !self.gt.contains_key(&s.image_id)) {
            return Err(Error::InvalidGraph(format!("no ground-truth graph for image {}", s.image_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumOptions {
    pub schedule: CurriculumSchedule,
    /// Draw swaps once per example instead of once per example and epoch.
    pub freeze_swaps: bool,
}

/// Examples of one epoch of a curriculum.
pub fn curriculum_examples<'a>(
    samples: &'a [QuestionSample],
    graphs: PairedGraphs<'a>,
    options: &CurriculumOptions,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Example<'a>>> {
    let noise = options.schedule.at(epoch);
    let stream = |s: &QuestionSample| {
        let e = (!options.freeze_swaps).then_some(epoch);
        ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("curriculum/{}", s.question_id), e))
    };
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let gt = &graphs.gt[&s.image_id];
        let noisy = &graphs.noisy[&s.image_id];
        match options.schedule.mode {
            CurriculumMode::MixedDataset => {
                out.push(Example::new(s).with_graph(gt));
                out.push(Example::new(s).with_graph(noisy));
            }
            CurriculumMode::WholeGraphSwap => {
                let use_noisy = noise.probability > 0.0 && stream(s).random_bool(noise.probability);
                out.push(Example::new(s).with_graph(if use_noisy { noisy } else { gt }));
            }
            CurriculumMode::ComponentSwap => {
                if noise.probability == 0.0 {
                    out.push(Example::new(s).with_graph(gt));
                } else {
                    let (g, _) = inject_noise(gt, noisy, noise.probability, noise.proportion, &mut stream(s))?;
                    out.push(Example::new(s).with_owned_graph(g));
                }
            }
        }
    }
    Ok(out)
}

/// Trains with graphs mixed per the schedule; validation uses `val` as given.
pub fn curriculum_train(
    model: &mut QaModel<f32>,
    samples: &[QuestionSample],
    graphs: PairedGraphs<'_>,
    val: &[Example<'_>],
    options: &CurriculumOptions,
    train_options: &TrainOptions,
) -> Result<TrainReport> {
    options.schedule.validate()?;
    graphs.check(samples)?;
    let seed = train_options.seed;
    train(
        model,
        |epoch| curriculum_examples(samples, graphs, options, seed, epoch),
        val,
        train_options,
    )
}
