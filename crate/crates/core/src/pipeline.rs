//! End-to-end stages shared by the command-line tool and the test suite:
//! building a dataset from a run configuration, training under a regime,
//! and scoring a model on a chosen set of graphs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{GraphSource, RunConfig};
use crate::curriculum::{curriculum_train, CurriculumOptions, PairedGraphs, Regime};
use crate::data::{load_gqa, Dataset, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::eval::{accuracy, MetricsReport};
use crate::features::read_vector_table;
use crate::graph::{SceneGraph, Vocabulary};
use crate::models::{derive_seed, train, Example, ModelConfig, Prediction, QaModel, TrainReport};
use crate::perturb::{ablate, corrupt, filter, synth_degrade, AblationMode, CorruptionSpec};
use crate::question::{AnswerVocabulary, QuestionSample};
use crate::world::generate_mini_world;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const ANSWERS_FILE: &str = "answers.json";

/// Loads the configured dataset, or generates the mini-world when no
/// manifest is given. Missing noisy graphs are synthesized from the ground
/// truth when the configuration asks for it.
pub fn build_dataset(config: &RunConfig, seed: u64) -> Result<Dataset> {
    let mut dataset = match &config.data.manifest {
        Some(path) => {
            let (manifest, base) = DatasetManifest::read(path)?;
            load_gqa(&manifest, &base)?
        }
        None => Dataset::from_world(generate_mini_world(&config.world, seed)?),
    };
    if dataset.noisy.is_empty() && config.data.synthesize_noisy {
        dataset.noisy = degrade_all(&dataset.graphs, config, seed)?;
    }
    Ok(dataset)
}

fn degrade_all(graphs: &BTreeMap<String, SceneGraph>, config: &RunConfig, seed: u64) -> Result<BTreeMap<String, SceneGraph>> {
    graphs
        .iter()
        .map(|(id, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("degrade/{id}"), None));
            Ok((id.clone(), synth_degrade(g, &config.degrade, &mut rng)?))
        })
        .collect()
}

/// A dataset with its word and answer vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub dataset: Dataset,
    pub vocab: Vocabulary,
    pub answers: AnswerVocabulary,
    /// Per-question vectors for late fusion, by question id.
    pub external: BTreeMap<String, Vec<f32>>,
}

impl Prepared {
    pub fn new(dataset: Dataset, min_word_count: usize) -> Result<Self> {
        let vocab = dataset.vocabulary(min_word_count)?;
        let answers = dataset.answers()?;
        Ok(Self {
            dataset,
            vocab,
            answers,
            external: BTreeMap::new(),
        })
    }

    pub fn from_config(config: &RunConfig, seed: u64) -> Result<Self> {
        let mut prepared = Self::new(build_dataset(config, seed)?, config.data.min_word_count)?;
        if let Some(path) = &config.data.external {
            prepared.external = read_vector_table(path)?;
        }
        Ok(prepared)
    }

    /// Writes the dataset files, `vocab.json` and `answers.json` into `dir`.
    pub fn write(&self, dir: &Path, seed: u64) -> Result<PathBuf> {
        let manifest = dir.join(MANIFEST_FILE);
        self.dataset.write(&manifest, seed, Some(self.vocab.hash()))?;
        write_json(&dir.join(VOCAB_FILE), &self.vocab)?;
        write_json(&dir.join(ANSWERS_FILE), &self.answers)?;
        Ok(manifest)
    }

    /// Reads a directory written by [`Prepared::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let (manifest, base) = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
        let dataset = load_gqa(&manifest, &base)?;
        let vocab: Vocabulary = read_json(&dir.join(VOCAB_FILE))?;
        if let Some(expected) = &manifest.vocabulary_hash {
            let found = vocab.hash();
            if &found != expected {
                return Err(Error::VocabularyMismatch {
                    expected: expected.clone(),
                    found,
                });
            }
        }
        let answers = read_json(&dir.join(ANSWERS_FILE))?;
        Ok(Self {
            dataset,
            vocab,
            answers,
            external: BTreeMap::new(),
        })
    }

    pub fn samples(&self, split: Split) -> Result<Vec<QuestionSample>> {
        self.dataset.samples(split, &self.vocab, &self.answers)
    }

    /// Graphs a model sees for `source`.
    pub fn graphs_for(&self, source: GraphSource, config: &RunConfig) -> Result<BTreeMap<String, SceneGraph>> {
        match source {
            GraphSource::Gt => Ok(self.dataset.graphs.clone()),
            GraphSource::Noisy => self.noisy(),
            GraphSource::Filtered => filtered(self.noisy()?, config),
        }
    }

    fn noisy(&self) -> Result<BTreeMap<String, SceneGraph>> {
        if self.dataset.noisy.is_empty() {
            return Err(Error::MissingNoisy(self.dataset.graphs.keys().cloned().collect()));
        }
        Ok(self.dataset.noisy.clone())
    }

    /// One example per sample with the graph of its image and whatever
    /// image features or external vector the model needs.
    pub fn examples<'a>(
        &'a self,
        samples: &'a [QuestionSample],
        graphs: &'a BTreeMap<String, SceneGraph>,
        config: &ModelConfig,
    ) -> Result<Vec<Example<'a>>> {
        samples
            .iter()
            .map(|s| {
                let mut e = Example::new(s);
                if config.kind.uses_graph() {
                    let g = graphs
                        .get(&s.image_id)
                        .ok_or_else(|| Error::InvalidGraph(format!("no graph for image {}", s.image_id)))?;
                    e = e.with_graph(g);
                }
                if config.kind.uses_objects() || config.kind.uses_spatial() {
                    let f = self
                        .dataset
                        .features
                        .get(&s.image_id)
                        .ok_or_else(|| Error::Feature(format!("no features for image {}", s.image_id)))?;
                    e = e.with_image(f);
                }
                if config.kind.uses_external() {
                    let v = self
                        .external
                        .get(&s.question_id)
                        .ok_or_else(|| Error::Feature(format!("no external vector for question {}", s.question_id)))?;
                    e = e.with_external(v);
                }
                Ok(e)
            })
            .collect()
    }

    /// The configured model with feature widths filled in from the data.
    pub fn model_config(&self, config: &ModelConfig) -> ModelConfig {
        let mut c = config.clone();
        if let Some(f) = self.dataset.features.values().next() {
            if c.object_dim == 0 {
                c.object_dim = f.objects.cols();
            }
            if c.spatial_dim == 0 {
                c.spatial_dim = f.spatial.len();
            }
        }
        if c.external_dim == 0 {
            if let Some(v) = self.external.values().next() {
                c.external_dim = v.len();
            }
        }
        c
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&text, e))
}

pub fn filtered(graphs: BTreeMap<String, SceneGraph>, config: &RunConfig) -> Result<BTreeMap<String, SceneGraph>> {
    graphs.into_iter().map(|(id, g)| Ok((id, filter(&g, &config.filter)?))).collect()
}

/// Every graph corrupted at `level`. Each image draws from its own stream,
/// shared across levels.
pub fn corrupted(graphs: &BTreeMap<String, SceneGraph>, level: f64, seed: u64) -> Result<BTreeMap<String, SceneGraph>> {
    let spec = CorruptionSpec { level };
    graphs
        .iter()
        .map(|(id, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("corrupt/{id}"), None));
            Ok((id.clone(), corrupt(g, spec, &mut rng)?))
        })
        .collect()
}

pub fn ablated(graphs: &BTreeMap<String, SceneGraph>, mode: AblationMode) -> BTreeMap<String, SceneGraph> {
    graphs.iter().map(|(id, g)| (id.clone(), ablate(g, mode))).collect()
}

/// Trains a fresh model under the configured regime and returns it with
/// the training report.
pub fn train_run(config: &RunConfig, prepared: &Prepared, seed: u64) -> Result<(QaModel<f32>, TrainReport)> {
    let model_config = prepared.model_config(&config.model);
    let mut model = QaModel::new(
        model_config.clone(),
        prepared.vocab.clone(),
        prepared.answers.clone(),
        derive_seed(seed, "init", None),
    )?;
    let train_samples = prepared.samples(Split::Train)?;
    let val_samples = prepared.samples(Split::Val)?;
    let val_graphs = prepared.graphs_for(config.train.validate_on, config)?;
    let val = prepared.examples(&val_samples, &val_graphs, &model_config)?;
    let options = config.train_options(seed);
    let regime = config.train.regime;
    log::info!("training {:?} under regime {regime} for {} epochs", model_config.kind, options.epochs);

    let report = match regime.mode() {
        None => {
            let source = if regime == Regime::Noisy { GraphSource::Noisy } else { GraphSource::Gt };
            let graphs = prepared.graphs_for(source, config)?;
            let examples = prepared.examples(&train_samples, &graphs, &model_config)?;
            train(&mut model, |_| Ok(examples.clone()), &val, &options)?
        }
        Some(mode) => {
            let noisy_source = if regime.filters_noisy() { GraphSource::Filtered } else { GraphSource::Noisy };
            let noisy = prepared.graphs_for(noisy_source, config)?;
            let graphs = PairedGraphs {
                gt: &prepared.dataset.graphs,
                noisy: &noisy,
            };
            let curriculum = CurriculumOptions {
                schedule: config.curriculum.schedule(options.epochs, mode)?,
                freeze_swaps: config.curriculum.freeze_swaps,
            };
            curriculum_train(&mut model, &train_samples, graphs, &val, &curriculum, &options)?
        }
    };
    for record in &report.log {
        log::info!(
            "[{}] epoch {} {} loss {:.4} accuracy {:.4}",
            record.regime,
            record.epoch,
            record.split,
            record.loss,
            record.accuracy
        );
    }
    Ok((model, report))
}

/// Predictions and metrics of `model` on one split, reading `graphs`.
pub fn evaluate_run(
    model: &QaModel<f32>,
    prepared: &Prepared,
    split: Split,
    graphs: &BTreeMap<String, SceneGraph>,
    batch_size: usize,
    regime: &str,
    seed: u64,
) -> Result<(Vec<Prediction>, MetricsReport)> {
    model.check_vocabulary(&prepared.vocab)?;
    let samples = model_samples(model, prepared, split)?;
    let examples = prepared.examples(&samples, graphs, &model.config)?;
    let predictions = model.predict(&examples, batch_size)?;
    let report = accuracy(&predictions, &prepared.dataset.questions_in(split), regime, seed)?;
    Ok((predictions, report))
}

/// Samples tokenized with the model's own vocabularies.
fn model_samples(model: &QaModel<f32>, prepared: &Prepared, split: Split) -> Result<Vec<QuestionSample>> {
    prepared.dataset.samples(split, &model.vocab, &model.answers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::MiniWorldSpec;

    fn tiny() -> RunConfig {
        RunConfig {
            world: MiniWorldSpec {
                scenes: 12,
                ..MiniWorldSpec::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn prepared_directory_round_trips() {
        let config = tiny();
        let prepared = Prepared::from_config(&config, 3).unwrap();
        assert_eq!(prepared.dataset.noisy.len(), prepared.dataset.graphs.len());
        let dir = tempfile::tempdir().unwrap();
        prepared.write(dir.path(), 3).unwrap();
        let back = Prepared::read(dir.path()).unwrap();
        assert_eq!(back.vocab, prepared.vocab);
        assert_eq!(back.answers, prepared.answers);
        assert_eq!(back.dataset.questions, prepared.dataset.questions);
        assert_eq!(back.dataset.noisy, prepared.dataset.noisy);
    }

    #[test]
    fn corruption_streams_do_not_depend_on_the_level() {
        let prepared = Prepared::from_config(&tiny(), 0).unwrap();
        let g = &prepared.dataset.graphs;
        assert_eq!(&corrupted(g, 0.0, 5).unwrap(), g);
        assert_eq!(corrupted(g, 0.5, 5).unwrap(), corrupted(g, 0.5, 5).unwrap());
    }

    #[test]
    fn filtered_source_needs_confidences() {
        let config = tiny();
        let prepared = Prepared::from_config(&config, 0).unwrap();
        let f = prepared.graphs_for(GraphSource::Filtered, &config).unwrap();
        assert!(f.values().all(|g| g.node_count() <= config.filter.k_objects));
    }
}
