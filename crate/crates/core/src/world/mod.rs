//! Synthetic mini-world: small random scenes, templated questions of the
//! five semantic types, and a brute-force interpreter that answers them.
//!
//! Each scene holds a handful of categorized objects (one colour and one
//! material each), a `sky` object carrying the weather, and random directed
//! relations. Questions whose program has no unique answer in the scene are
//! resampled, so every stored answer is exactly what the interpreter returns.

mod program;

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ImageFeatures;
use crate::graph::{ObjectNode, RelationEdge, SceneGraph};
use crate::question::{Question, SemanticType};
use crate::tensor::Matrix;

pub use program::Program;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiniWorldSpec {
    /// Category name -> object names.
    pub categories: BTreeMap<String, Vec<String>>,
    pub colors: Vec<String>,
    pub materials: Vec<String>,
    pub relations: Vec<String>,
    pub weather: Vec<String>,
    /// Name of the object that carries the weather attribute.
    pub global_holder: String,
    /// Categorized objects per scene, not counting the weather holder.
    pub objects_per_scene: usize,
    pub edges_per_scene: usize,
    pub scenes: usize,
    pub questions_per_scene: usize,
    /// Question slots of a scene cycle through these types.
    pub question_types: Vec<SemanticType>,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub max_retries: usize,
    /// Train and validation fractions; the rest is test.
    pub split: [f64; 2],
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for MiniWorldSpec {
    fn default() -> Self {
        let categories = [
            ("animal", ["dog", "cat", "horse", "bird"]),
            ("furniture", ["chair", "table", "bed", "shelf"]),
            ("vehicle", ["car", "bus", "bike", "truck"]),
            ("food", ["apple", "pizza", "cake", "banana"]),
            ("clothing", ["shirt", "hat", "jacket", "shoe"]),
        ]
        .into_iter()
        .map(|(c, names)| (c.to_string(), words(&names)))
        .collect();
        Self {
            categories,
            colors: words(&["red", "blue", "green", "yellow", "white", "black", "brown", "gray"]),
            materials: words(&["wooden", "metal", "plastic", "cloth"]),
            relations: words(&[
                "to the left of",
                "to the right of",
                "on top of",
                "under",
                "near",
                "behind",
                "holding",
                "next to",
            ]),
            weather: words(&["sunny", "cloudy", "rainy", "foggy"]),
            global_holder: "sky".into(),
            objects_per_scene: 7,
            edges_per_scene: 8,
            scenes: 1000,
            questions_per_scene: 5,
            question_types: SemanticType::ALL.to_vec(),
            feature_dim: 32,
            feature_noise: 0.1,
            max_retries: 64,
            split: [0.8, 0.1],
        }
    }
}

impl MiniWorldSpec {
    pub fn object_names(&self) -> Vec<String> {
        self.categories.values().flatten().cloned().collect()
    }

    /// Every attribute word a scene may carry.
    pub fn attribute_vocabulary(&self) -> Vec<String> {
        self.colors
            .iter()
            .chain(&self.materials)
            .chain(&self.weather)
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mini-world: {m}")));
        if self.categories.is_empty() || self.categories.values().any(Vec::is_empty) {
            return bad("every category needs at least one object name");
        }
        if self.object_names().len() < 2 {
            return bad("need at least two object names");
        }
        if self.colors.is_empty() || self.materials.is_empty() || self.relations.is_empty() || self.weather.is_empty() {
            return bad("colour, material, relation and weather vocabularies must be nonempty");
        }
        if self.objects_per_scene < 2 || self.edges_per_scene == 0 {
            return bad("scenes need at least two objects and one edge");
        }
        if self.edges_per_scene > self.objects_per_scene * (self.objects_per_scene - 1) {
            return bad("more edges than distinct ordered object pairs");
        }
        if self.scenes == 0 || self.questions_per_scene == 0 || self.question_types.is_empty() {
            return bad("scene and question counts must be positive");
        }
        if self.feature_dim == 0 || self.max_retries == 0 {
            return bad("feature_dim and max_retries must be positive");
        }
        let [train, val] = self.split;
        if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 {
            return bad("split fractions must lie in [0, 1] and sum to at most 1");
        }
        Ok(())
    }
}

/// Question ids of each split, sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniWorld {
    pub graphs: Vec<SceneGraph>,
    pub questions: Vec<Question>,
    pub splits: Splits,
    pub features: BTreeMap<String, ImageFeatures>,
    /// Question slots dropped because no unambiguous instantiation was found.
    pub skipped: usize,
}

pub fn generate_mini_world(spec: &MiniWorldSpec, seed: u64) -> Result<MiniWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = spec.object_names();
    let mut graphs = Vec::with_capacity(spec.scenes);
    let mut questions = Vec::new();
    let mut skipped = 0;
    for s in 0..spec.scenes {
        let image_id = format!("{s:05}");
        let g = random_scene(spec, &names, &image_id, &mut rng)?;
        for j in 0..spec.questions_per_scene {
            let kind = spec.question_types[(s * spec.questions_per_scene + j) % spec.question_types.len()];
            match instantiate(spec, &names, &g, kind, &mut rng) {
                Some((text, program)) => {
                    let answer = program.execute(&g).expect("instantiated programs have an answer");
                    questions.push(Question {
                        question_id: format!("{image_id}-{j}"),
                        text,
                        answer,
                        image_id: image_id.clone(),
                        semantic_type: kind,
                        program: Some(program),
                    });
                }
                None => {
                    log::debug!("no unambiguous {kind} question for scene {image_id}");
                    skipped += 1;
                }
            }
        }
        graphs.push(g);
    }
    let splits = stratified_splits(&questions, spec.split, &mut rng);
    let features = synthesize_features(spec, &graphs, seed);
    Ok(MiniWorld {
        graphs,
        questions,
        splits,
        features,
        skipped,
    })
}

fn random_scene(spec: &MiniWorldSpec, names: &[String], image_id: &str, rng: &mut impl Rng) -> Result<SceneGraph> {
    let n = spec.objects_per_scene;
    let mut nodes: Vec<ObjectNode> = (0..n)
        .map(|_| {
            let name = names.choose(rng).expect("validated").clone();
            let color = spec.colors.choose(rng).expect("validated").clone();
            let material = spec.materials.choose(rng).expect("validated").clone();
            ObjectNode::new(name, vec![color, material])
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(rng);
    let mut edges: Vec<RelationEdge> = pairs[..spec.edges_per_scene]
        .iter()
        .map(|&(a, b)| RelationEdge::new(spec.relations.choose(rng).expect("validated").clone(), a, b))
        .collect();

    // The weather holder goes to a random slot; later indices shift by one.
    let sky = rng.random_range(0..=n);
    let weather = spec.weather.choose(rng).expect("validated").clone();
    nodes.insert(sky, ObjectNode::new(spec.global_holder.clone(), vec![weather]));
    for e in &mut edges {
        if e.source >= sky {
            e.source += 1;
        }
        if e.receiver >= sky {
            e.receiver += 1;
        }
    }
    SceneGraph::new(image_id, nodes, edges)
}

fn instantiate(
    spec: &MiniWorldSpec,
    names: &[String],
    g: &SceneGraph,
    kind: SemanticType,
    rng: &mut impl Rng,
) -> Option<(String, Program)> {
    let objects: Vec<usize> = (0..g.node_count())
        .filter(|&i| g.nodes()[i].name != spec.global_holder)
        .collect();
    for _ in 0..spec.max_retries {
        let candidate = match kind {
            SemanticType::Relation => {
                let e = g.edges().choose(rng)?;
                let subject = g.nodes()[e.source].name.clone();
                let text = format!("what is {} the {subject}?", e.relation);
                (
                    text,
                    Program::RelationTarget {
                        subject,
                        relation: e.relation.clone(),
                    },
                )
            }
            SemanticType::Attribute => {
                let node = &g.nodes()[*objects.choose(rng)?];
                let (word, choices) = if rng.random_bool(0.5) {
                    ("color", &spec.colors)
                } else {
                    ("material", &spec.materials)
                };
                (
                    format!("what {word} is the {}?", node.name),
                    Program::AttributeOf {
                        subject: node.name.clone(),
                        choices: choices.clone(),
                    },
                )
            }
            SemanticType::Object => {
                let present: Vec<&String> = names.iter().filter(|n| g.nodes().iter().any(|o| &o.name == *n)).collect();
                let absent: Vec<&String> = names.iter().filter(|n| !present.contains(n)).collect();
                let want_yes = rng.random_bool(0.5);
                let pool = if want_yes { &present } else { &absent };
                if pool.is_empty() {
                    continue;
                }
                if rng.random_bool(0.5) {
                    let a = *pool.choose(rng)?;
                    (format!("is there a {a}?"), Program::Exists { names: vec![a.clone()] })
                } else {
                    let a = *pool.choose(rng)?;
                    let others: Vec<&String> = if want_yes { names.iter().collect() } else { absent.clone() };
                    let others: Vec<&String> = others.into_iter().filter(|b| *b != a).collect();
                    let Some(&b) = others.choose(rng) else { continue };
                    let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
                    (
                        format!("are there any {a} or {b}?"),
                        Program::Exists {
                            names: vec![a.clone(), b.clone()],
                        },
                    )
                }
            }
            SemanticType::Category => {
                let node = &g.nodes()[*objects.choose(rng)?];
                let (category, members) = spec.categories.iter().find(|(_, m)| m.contains(&node.name))?;
                let color = node.attributes.iter().find(|a| spec.colors.contains(a))?;
                (
                    format!("which kind of {category} is {color}?"),
                    Program::Member {
                        members: members.clone(),
                        attribute: color.clone(),
                    },
                )
            }
            SemanticType::Global => (
                "how is the weather?".to_string(),
                Program::Global {
                    holder: spec.global_holder.clone(),
                    choices: spec.weather.clone(),
                },
            ),
        };
        if candidate.1.execute(g).is_some() {
            return Some(candidate);
        }
    }
    None
}

fn stratified_splits(questions: &[Question], fractions: [f64; 2], rng: &mut impl Rng) -> Splits {
    let mut by_type: BTreeMap<SemanticType, Vec<&str>> = BTreeMap::new();
    for q in questions {
        by_type.entry(q.semantic_type).or_default().push(&q.question_id);
    }
    let mut splits = Splits::default();
    for ids in by_type.values_mut() {
        ids.shuffle(rng);
        let n = ids.len();
        let train = (fractions[0] * n as f64 + 1e-9).floor() as usize;
        let val = ((fractions[0] + fractions[1]) * n as f64 + 1e-9).floor() as usize;
        splits.train.extend(ids[..train].iter().map(|s| s.to_string()));
        splits.val.extend(ids[train..val].iter().map(|s| s.to_string()));
        splits.test.extend(ids[val..].iter().map(|s| s.to_string()));
    }
    splits.train.sort();
    splits.val.sort();
    splits.test.sort();
    splits
}

/// Noisy per-word codes summed into object rows; the spatial vector is the
/// mean object row plus noise.
fn synthesize_features(spec: &MiniWorldSpec, graphs: &[SceneGraph], seed: u64) -> BTreeMap<String, ImageFeatures> {
    let dim = spec.feature_dim;
    let mut code_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut vocab: Vec<String> = spec.object_names();
    vocab.push(spec.global_holder.clone());
    vocab.extend(spec.attribute_vocabulary());
    let codes: BTreeMap<String, Vec<f64>> = vocab
        .into_iter()
        .map(|w| {
            let code = (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut code_rng);
                    scale * z
                })
                .collect::<Vec<f64>>();
            (w, code)
        })
        .collect();
    let noise = spec.feature_noise * scale;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00fe_a7e5);
    let mut gauss = move || {
        let z: f64 = StandardNormal.sample(&mut noise_rng);
        noise * z
    };
    graphs
        .iter()
        .map(|g| {
            let mut objects = Matrix::<f32>::zeros(g.node_count(), dim);
            let mut mean = vec![0.0f64; dim];
            for (i, node) in g.nodes().iter().enumerate() {
                for j in 0..dim {
                    let mut v = gauss();
                    for word in std::iter::once(&node.name).chain(&node.attributes) {
                        if let Some(c) = codes.get(word) {
                            v += c[j];
                        }
                    }
                    objects.set(i, j, v as f32);
                    mean[j] += v / g.node_count() as f64;
                }
            }
            let spatial = mean.iter().map(|m| (m + gauss()) as f32).collect();
            (g.image_id().to_string(), ImageFeatures { objects, spatial })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MiniWorldSpec {
        MiniWorldSpec {
            scenes: 40,
            ..MiniWorldSpec::default()
        }
    }

    #[test]
    fn every_answer_matches_the_interpreter() {
        let w = generate_mini_world(&small(), 5).unwrap();
        let graphs: BTreeMap<&str, &SceneGraph> = w.graphs.iter().map(|g| (g.image_id(), g)).collect();
        for q in &w.questions {
            let p = q.program.as_ref().unwrap();
            assert_eq!(p.execute(graphs[q.image_id.as_str()]).as_deref(), Some(q.answer.as_str()), "{q:?}");
        }
    }

    #[test]
    fn one_question_slot_per_type_per_scene() {
        let w = generate_mini_world(&small(), 1).unwrap();
        assert_eq!(w.questions.len() + w.skipped, 200);
        for t in SemanticType::ALL {
            assert!(w.questions.iter().any(|q| q.semantic_type == t));
        }
    }

    #[test]
    fn scenes_hold_one_weather_holder() {
        let spec = small();
        let w = generate_mini_world(&spec, 2).unwrap();
        for g in &w.graphs {
            assert_eq!(g.node_count(), spec.objects_per_scene + 1);
            assert_eq!(g.edge_count(), spec.edges_per_scene);
            assert_eq!(g.nodes().iter().filter(|n| n.name == "sky").count(), 1);
            assert!(g.edges().iter().all(|e| g.nodes()[e.source].name != "sky" && !e.is_self_loop()));
        }
    }

    #[test]
    fn splits_are_disjoint_and_complete() {
        let w = generate_mini_world(&small(), 3).unwrap();
        let mut all: Vec<&String> = w.splits.train.iter().chain(&w.splits.val).chain(&w.splits.test).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(n, w.questions.len());
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_mini_world(&small(), 9).unwrap();
        let b = generate_mini_world(&small(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = MiniWorldSpec {
            edges_per_scene: 100,
            ..small()
        };
        assert!(generate_mini_world(&spec, 0).is_err());
    }
}
