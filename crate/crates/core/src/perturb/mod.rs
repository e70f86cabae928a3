//! Controlled damage and cleanup of scene graphs: corruption with UNK and
//! endpoint swaps, confidence filtering, ablation, and a simulator that turns
//! a ground-truth graph into a plausible generated one.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ObjectNode, RelationEdge, SceneGraph, UNK_TOKEN};

fn check_unit(value: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} = {value} is not in [0, 1]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Chance that any single component is corrupted.
    pub level: f64,
}

/// Independently per component with chance `level`: a node name becomes
/// UNK, each attribute becomes UNK, an edge trades endpoints with another
/// random edge, and a relation name becomes UNK. Node and edge counts are
/// unchanged and no material from outside the graph is introduced.
pub fn corrupt(gt: &SceneGraph, spec: CorruptionSpec, rng: &mut impl Rng) -> Result<SceneGraph> {
    check_unit(spec.level, "corruption level")?;
    let p = spec.level;
    let (image_id, mut nodes, mut edges) = gt.clone().into_parts();
    for node in &mut nodes {
        if rng.random_bool(p) {
            node.name = UNK_TOKEN.into();
        }
        for attr in &mut node.attributes {
            if rng.random_bool(p) {
                *attr = UNK_TOKEN.into();
            }
        }
    }
    let ne = edges.len();
    for k in 0..ne {
        if rng.random_bool(p) && ne > 1 {
            let mut j = rng.random_range(0..ne - 1);
            if j >= k {
                j += 1;
            }
            let (a, b) = ((edges[k].source, edges[k].receiver), (edges[j].source, edges[j].receiver));
            (edges[k].source, edges[k].receiver) = b;
            (edges[j].source, edges[j].receiver) = a;
        }
    }
    for e in &mut edges {
        if rng.random_bool(p) {
            e.relation = UNK_TOKEN.into();
        }
    }
    SceneGraph::new(image_id, nodes, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    TopK,
    Threshold,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub mode: FilterMode,
    pub k_objects: usize,
    pub k_attrs_per_object: usize,
    pub k_relations: usize,
    pub t_object: f64,
    pub t_attribute: f64,
    pub t_relation: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            mode: FilterMode::TopK,
            k_objects: 40,
            k_attrs_per_object: 3,
            k_relations: 80,
            t_object: 0.1,
            t_attribute: 0.9,
            t_relation: 0.8,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            FilterMode::TopK if self.k_objects == 0 || self.k_attrs_per_object == 0 || self.k_relations == 0 => {
                Err(Error::Config("top-k filter sizes must be positive".into()))
            }
            FilterMode::Threshold => {
                check_unit(self.t_object, "t_object")?;
                check_unit(self.t_attribute, "t_attribute")?;
                check_unit(self.t_relation, "t_relation")
            }
            _ => Ok(()),
        }
    }
}

/// Indices of the `k` largest scores, ties broken by index, returned in
/// ascending index order.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

fn require_confidences(g: &SceneGraph) -> Result<()> {
    for (i, n) in g.nodes().iter().enumerate() {
        if n.confidence.is_none() {
            return Err(Error::MissingConfidence(format!("object {i} ('{}')", n.name)));
        }
        if n.attribute_confidences.is_none() {
            return Err(Error::MissingConfidence(format!("attributes of object {i} ('{}')", n.name)));
        }
    }
    if let Some((k, e)) = g.edges().iter().enumerate().find(|(_, e)| e.confidence.is_none()) {
        return Err(Error::MissingConfidence(format!("edge {k} ('{}')", e.relation)));
    }
    Ok(())
}

/// Keeps the selected nodes (ascending), the selected attribute positions of
/// each, and the selected edges; remaps endpoints onto the compacted nodes.
fn rebuild(g: &SceneGraph, keep_nodes: &[usize], keep_attrs: impl Fn(usize, &ObjectNode) -> Vec<usize>, keep_edges: &[usize]) -> Result<SceneGraph> {
    let mut new_index = vec![usize::MAX; g.node_count()];
    let mut nodes = Vec::with_capacity(keep_nodes.len());
    for (new, &old) in keep_nodes.iter().enumerate() {
        new_index[old] = new;
        let node = &g.nodes()[old];
        let attrs = keep_attrs(old, node);
        let mut kept = ObjectNode::new(node.name.clone(), attrs.iter().map(|&j| node.attributes[j].clone()).collect());
        kept.confidence = node.confidence;
        kept.attribute_confidences = node
            .attribute_confidences
            .as_ref()
            .map(|c| attrs.iter().map(|&j| c[j]).collect());
        nodes.push(kept);
    }
    let edges = keep_edges
        .iter()
        .map(|&k| {
            let e = &g.edges()[k];
            RelationEdge {
                source: new_index[e.source],
                receiver: new_index[e.receiver],
                ..e.clone()
            }
        })
        .collect();
    SceneGraph::new(g.image_id(), nodes, edges)
}

/// Confidence-based pruning. Edges survive only when both endpoints do.
pub fn filter(g: &SceneGraph, spec: &FilterSpec) -> Result<SceneGraph> {
    spec.validate()?;
    if spec.mode == FilterMode::None {
        return Ok(g.clone());
    }
    require_confidences(g)?;
    let node_conf: Vec<f64> = g.nodes().iter().map(|n| n.confidence.unwrap_or(0.0)).collect();
    let attr_conf = |n: &ObjectNode| n.attribute_confidences.clone().unwrap_or_default();
    let keep_nodes: Vec<usize> = match spec.mode {
        FilterMode::TopK => top_k(&node_conf, spec.k_objects),
        _ => (0..g.node_count()).filter(|&i| node_conf[i] >= spec.t_object).collect(),
    };
    let mut alive = vec![false; g.node_count()];
    keep_nodes.iter().for_each(|&i| alive[i] = true);
    let candidates: Vec<usize> = (0..g.edge_count())
        .filter(|&k| alive[g.edges()[k].source] && alive[g.edges()[k].receiver])
        .collect();
    let cand_conf: Vec<f64> = candidates.iter().map(|&k| g.edges()[k].confidence.unwrap_or(0.0)).collect();
    let keep_edges: Vec<usize> = match spec.mode {
        FilterMode::TopK => top_k(&cand_conf, spec.k_relations).into_iter().map(|i| candidates[i]).collect(),
        _ => candidates
            .iter()
            .zip(&cand_conf)
            .filter(|(_, &c)| c >= spec.t_relation)
            .map(|(&k, _)| k)
            .collect(),
    };
    let keep_attrs = |_: usize, n: &ObjectNode| -> Vec<usize> {
        let c = attr_conf(n);
        match spec.mode {
            FilterMode::TopK => top_k(&c, spec.k_attrs_per_object),
            _ => (0..c.len()).filter(|&j| c[j] >= spec.t_attribute).collect(),
        }
    };
    rebuild(g, &keep_nodes, keep_attrs, &keep_edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Delete every edge.
    Relations,
    /// Empty every attribute list.
    Attributes,
    /// Keep edges but replace relation names with UNK.
    RelationNames,
}

pub fn ablate(g: &SceneGraph, mode: AblationMode) -> SceneGraph {
    let (image_id, mut nodes, mut edges) = g.clone().into_parts();
    match mode {
        AblationMode::Relations => edges.clear(),
        AblationMode::Attributes => {
            for n in &mut nodes {
                n.attributes.clear();
                if n.attribute_confidences.is_some() {
                    n.attribute_confidences = Some(Vec::new());
                }
            }
        }
        AblationMode::RelationNames => edges.iter_mut().for_each(|e| e.relation = UNK_TOKEN.into()),
    }
    SceneGraph::new(image_id, nodes, edges).expect("ablation keeps a valid graph")
}

/// Beta distribution parameters for drawn confidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaSpec {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    fn dist(&self) -> Result<Beta<f64>> {
        Beta::new(self.alpha, self.beta).map_err(|e| Error::Config(format!("beta({}, {}): {e}", self.alpha, self.beta)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeSpec {
    pub p_drop_object: f64,
    /// Mean number of spurious attributes appended per surviving object.
    pub spurious_attr_rate: f64,
    pub p_keep_edge: f64,
    /// Mean number of random edges added per graph.
    pub resampled_edges: f64,
    pub genuine_confidence: BetaSpec,
    pub spurious_confidence: BetaSpec,
    /// Pool of spurious attributes.
    pub attribute_vocabulary: Vec<String>,
    /// Pool of names for random edges; the graph's own relations when empty.
    pub relation_vocabulary: Vec<String>,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self {
            p_drop_object: 3.0 / 16.0,
            spurious_attr_rate: 2.0,
            p_keep_edge: 0.2,
            resampled_edges: 6.0,
            genuine_confidence: BetaSpec { alpha: 8.0, beta: 2.0 },
            spurious_confidence: BetaSpec { alpha: 2.0, beta: 8.0 },
            attribute_vocabulary: Vec::new(),
            relation_vocabulary: Vec::new(),
        }
    }
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        check_unit(self.p_drop_object, "p_drop_object")?;
        check_unit(self.p_keep_edge, "p_keep_edge")?;
        if !(self.spurious_attr_rate >= 0.0 && self.resampled_edges >= 0.0) {
            return Err(Error::Config("degradation rates must be nonnegative".into()));
        }
        if self.spurious_attr_rate > 0.0 && self.attribute_vocabulary.is_empty() {
            return Err(Error::Empty("attribute vocabulary for spurious attributes".into()));
        }
        self.genuine_confidence.dist()?;
        self.spurious_confidence.dist()?;
        Ok(())
    }
}

fn poisson(rate: f64, rng: &mut impl Rng) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("positive finite rate");
    let v: f64 = d.sample(rng);
    v as usize
}

/// Simulated generator output: objects dropped, spurious attributes added
/// after the genuine ones, most true edges lost and random edges added.
/// Genuine components get high-mean confidences, spurious ones low-mean.
/// At least one object always survives.
pub fn synth_degrade(gt: &SceneGraph, spec: &DegradeSpec, rng: &mut impl Rng) -> Result<SceneGraph> {
    spec.validate()?;
    let genuine = spec.genuine_confidence.dist()?;
    let spurious = spec.spurious_confidence.dist()?;
    let n = gt.node_count();
    let mut keep: Vec<usize> = (0..n).filter(|_| !rng.random_bool(spec.p_drop_object)).collect();
    if keep.is_empty() && n > 0 {
        keep.push(rng.random_range(0..n));
    }
    let mut new_index = vec![usize::MAX; n];
    let mut nodes = Vec::with_capacity(keep.len());
    for (new, &old) in keep.iter().enumerate() {
        new_index[old] = new;
        let src = &gt.nodes()[old];
        let mut attrs = src.attributes.clone();
        let mut confs: Vec<f64> = attrs.iter().map(|_| genuine.sample(rng)).collect();
        for _ in 0..poisson(spec.spurious_attr_rate, rng) {
            let fresh: Vec<&String> = spec.attribute_vocabulary.iter().filter(|a| !attrs.contains(a)).collect();
            let Some(&a) = fresh.choose(rng) else { break };
            attrs.push(a.clone());
            confs.push(spurious.sample(rng));
        }
        nodes.push(ObjectNode::new(src.name.clone(), attrs).with_confidences(genuine.sample(rng), confs));
    }
    let mut edges = Vec::new();
    for e in gt.edges() {
        let kept = rng.random_bool(spec.p_keep_edge);
        if kept && new_index[e.source] != usize::MAX && new_index[e.receiver] != usize::MAX {
            edges.push(RelationEdge::new(e.relation.clone(), new_index[e.source], new_index[e.receiver]).with_confidence(genuine.sample(rng)));
        }
    }
    let own: Vec<String> = gt.edges().iter().map(|e| e.relation.clone()).collect();
    let pool = if spec.relation_vocabulary.is_empty() { &own } else { &spec.relation_vocabulary };
    if nodes.len() > 1 && !pool.is_empty() {
        for _ in 0..poisson(spec.resampled_edges, rng) {
            let s = rng.random_range(0..nodes.len());
            let mut r = rng.random_range(0..nodes.len() - 1);
            if r >= s {
                r += 1;
            }
            let rel = pool.choose(rng).expect("nonempty").clone();
            edges.push(RelationEdge::new(rel, s, r).with_confidence(spurious.sample(rng)));
        }
    }
    SceneGraph::new(gt.image_id(), nodes, edges)
}
