//! In-memory datasets: questions joined to ground-truth graphs, optional
//! noisy graphs and image features, plus the manifest that points at them on
//! disk.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_feature_blob, write_feature_blob, ImageFeatures};
use crate::graph::{build_vocabulary, read_scene_graph_file, write_scene_graph_file, SceneGraph, Vocabulary};
use crate::question::{read_questions, write_questions, AnswerVocabulary, Question, QuestionSample};
use crate::world::{MiniWorld, Splits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" | "testdev" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Files making up a dataset. Relative paths resolve against the directory
/// holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// One questions document per split.
    pub questions: BTreeMap<Split, PathBuf>,
    pub scene_graphs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_scene_graphs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary_hash: Option<String>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::json(&text, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn referenced(&self, base: &Path) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = self.questions.values().map(|p| base.join(p)).collect();
        out.push(base.join(&self.scene_graphs));
        out.extend(self.noisy_scene_graphs.iter().map(|p| base.join(p)));
        out.extend(self.features.iter().map(|p| base.join(p)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// Ground-truth graphs by image id.
    pub graphs: BTreeMap<String, SceneGraph>,
    /// Generated or degraded graphs by image id.
    pub noisy: BTreeMap<String, SceneGraph>,
    /// Questions ordered by id.
    pub questions: Vec<Question>,
    pub splits: Splits,
    pub features: BTreeMap<String, ImageFeatures>,
    /// Questions dropped at load because their image had no graph.
    pub dropped: usize,
}

fn by_id(graphs: impl IntoIterator<Item = SceneGraph>) -> BTreeMap<String, SceneGraph> {
    graphs.into_iter().map(|g| (g.image_id().to_string(), g)).collect()
}

impl Dataset {
    pub fn from_world(world: MiniWorld) -> Self {
        Self {
            graphs: by_id(world.graphs),
            noisy: BTreeMap::new(),
            questions: world.questions,
            splits: world.splits,
            features: world.features,
            dropped: 0,
        }
    }

    pub fn split_ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    /// Questions of `split`, in id order.
    pub fn questions_in(&self, split: Split) -> Vec<&Question> {
        let ids: BTreeSet<&str> = self.split_ids(split).iter().map(String::as_str).collect();
        self.questions.iter().filter(|q| ids.contains(q.question_id.as_str())).collect()
    }

    /// Words of every graph (ground truth and noisy) and every question.
    pub fn vocabulary(&self, min_count: usize) -> Result<Vocabulary> {
        let graphs: Vec<SceneGraph> = self.graphs.values().chain(self.noisy.values()).cloned().collect();
        build_vocabulary(&graphs, self.questions.iter().map(|q| q.text.as_str()), min_count)
    }

    /// Answers seen in the training split.
    pub fn answers(&self) -> Result<AnswerVocabulary> {
        AnswerVocabulary::build(self.questions_in(Split::Train).into_iter().map(|q| q.answer.as_str()))
    }

    pub fn samples(&self, split: Split, vocab: &Vocabulary, answers: &AnswerVocabulary) -> Result<Vec<QuestionSample>> {
        self.questions_in(split)
            .into_iter()
            .map(|q| QuestionSample::from_question(q, vocab, answers))
            .collect()
    }

    /// Writes every part next to `manifest_path` and the manifest itself.
    pub fn write(&self, manifest_path: &Path, seed: u64, vocabulary_hash: Option<String>) -> Result<DatasetManifest> {
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
        let mut questions = BTreeMap::new();
        for split in Split::ALL {
            let rel = PathBuf::from(format!("questions_{}.json", split.as_str()));
            let qs: Vec<Question> = self.questions_in(split).into_iter().cloned().collect();
            write_questions(&base.join(&rel), &qs)?;
            questions.insert(split, rel);
        }
        let graphs: Vec<SceneGraph> = self.graphs.values().cloned().collect();
        write_scene_graph_file(&base.join("scene_graphs.json"), &graphs)?;
        let noisy_scene_graphs = if self.noisy.is_empty() {
            None
        } else {
            let noisy: Vec<SceneGraph> = self.noisy.values().cloned().collect();
            write_scene_graph_file(&base.join("noisy_scene_graphs.json"), &noisy)?;
            Some(PathBuf::from("noisy_scene_graphs.json"))
        };
        let features = if self.features.is_empty() {
            None
        } else {
            write_feature_blob(&base.join("features.bin"), &self.features)?;
            Some(PathBuf::from("features.bin"))
        };
        let manifest = DatasetManifest {
            questions,
            scene_graphs: PathBuf::from("scene_graphs.json"),
            noisy_scene_graphs,
            features,
            seed,
            vocabulary_hash,
        };
        manifest.write(manifest_path)?;
        Ok(manifest)
    }
}

/// Loads the files named by a manifest and joins questions to graphs by
/// image id. Questions whose image has no ground-truth graph are dropped and
/// counted.
pub fn load_gqa(manifest: &DatasetManifest, base: &Path) -> Result<Dataset> {
    for path in manifest.referenced(base) {
        if !path.exists() {
            return Err(Error::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
    }
    let (graphs, report) = read_scene_graph_file(&base.join(&manifest.scene_graphs))?;
    if report.dropped_relations > 0 {
        log::warn!("dropped {} relations with unknown targets while loading scene graphs", report.dropped_relations);
    }
    let graphs = by_id(graphs);
    let noisy = match &manifest.noisy_scene_graphs {
        Some(p) => by_id(read_scene_graph_file(&base.join(p))?.0),
        None => BTreeMap::new(),
    };
    let features = match &manifest.features {
        Some(p) => read_feature_blob(&base.join(p))?,
        None => BTreeMap::new(),
    };
    let mut questions = Vec::new();
    let mut splits = Splits::default();
    let mut seen = BTreeSet::new();
    let mut dropped = 0;
    for (&split, rel) in &manifest.questions {
        for q in read_questions(&base.join(rel))? {
            if !graphs.contains_key(&q.image_id) {
                dropped += 1;
                continue;
            }
            if !seen.insert(q.question_id.clone()) {
                return Err(Error::Config(format!("question '{}' appears in more than one split", q.question_id)));
            }
            match split {
                Split::Train => splits.train.push(q.question_id.clone()),
                Split::Val => splits.val.push(q.question_id.clone()),
                Split::Test => splits.test.push(q.question_id.clone()),
            }
            questions.push(q);
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} questions whose image has no scene graph");
    }
    questions.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    for ids in [&mut splits.train, &mut splits.val, &mut splits.test] {
        ids.sort();
    }
    Ok(Dataset {
        graphs,
        noisy,
        questions,
        splits,
        features,
        dropped,
    })
}
