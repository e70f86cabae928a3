//! Run configuration: one TOML document with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{schedule_linear, CurriculumMode, CurriculumSchedule, Regime};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, TrainOptions};
use crate::perturb::{DegradeSpec, FilterSpec};
use crate::tensor::AdamConfig;
use crate::world::MiniWorldSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset manifest to load; a mini-world is generated when absent.
    pub manifest: Option<PathBuf>,
    pub min_word_count: usize,
    /// Build noisy graphs by degrading the ground truth when the dataset
    /// has none.
    pub synthesize_noisy: bool,
    /// Per-question vector table for late fusion.
    pub external: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            manifest: None,
            min_word_count: 1,
            synthesize_noisy: true,
            external: None,
        }
    }
}

/// Which graphs a model sees at validation or evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    Gt,
    Noisy,
    /// Noisy graphs after the configured filter.
    Filtered,
}

impl std::str::FromStr for GraphSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(GraphSource::Gt),
            "noisy" => Ok(GraphSource::Noisy),
            "filtered" => Ok(GraphSource::Filtered),
            other => Err(Error::Config(format!("unknown graph source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Graphs used for picking the best epoch.
    pub validate_on: GraphSource,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainOptions::default();
        Self {
            regime: Regime::Gt,
            epochs: base.epochs,
            batch_size: base.batch_size,
            optimizer: base.optimizer,
            validate_on: GraphSource::Gt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub warmup_epochs: usize,
    pub ramp_start: f64,
    pub ramp_end: f64,
    pub freeze_swaps: bool,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            warmup_epochs: 2,
            ramp_start: 0.1,
            ramp_end: 0.9,
            freeze_swaps: false,
        }
    }
}

impl CurriculumSection {
    pub fn schedule(&self, epochs: usize, mode: CurriculumMode) -> Result<CurriculumSchedule> {
        match mode {
            CurriculumMode::MixedDataset => Ok(CurriculumSchedule::zeros(epochs, mode)),
            _ => schedule_linear(epochs, self.warmup_epochs, self.ramp_start, self.ramp_end, mode),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: String,
    pub batch_size: usize,
    pub corruption_levels: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: "val".into(),
            batch_size: 256,
            corruption_levels: vec![0.0, 0.2, 0.4, 0.6, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub world: MiniWorldSpec,
    pub degrade: DegradeSpec,
    pub filter: FilterSpec,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub curriculum: CurriculumSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = MiniWorldSpec::default();
        let degrade = DegradeSpec {
            attribute_vocabulary: world.attribute_vocabulary(),
            relation_vocabulary: world.relations.clone(),
            ..DegradeSpec::default()
        };
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            data: DataSection::default(),
            world,
            degrade,
            filter: FilterSpec::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            curriculum: CurriculumSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.manifest.is_none() {
            self.world.validate()?;
        }
        if self.data.synthesize_noisy {
            self.degrade.validate()?;
        }
        self.filter.validate()?;
        self.model.validate()?;
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be positive".into()));
        }
        if let Some(mode) = self.train.regime.mode() {
            self.curriculum.schedule(self.train.epochs, mode)?;
        }
        self.eval.split.parse::<crate::data::Split>()?;
        Ok(())
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            optimizer: self.train.optimizer.clone(),
            seed,
            regime: self.train.regime.label().to_string(),
        }
    }
}
