//! Checkpoints: a little-endian parameter blob plus a JSON manifest holding
//! the configuration, both vocabularies and every parameter's shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, QaModel};
use crate::error::{Error, Result};
use crate::features::sidecar_path;
use crate::graph::Vocabulary;
use crate::question::AnswerVocabulary;
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub config: ModelConfig,
    pub vocabulary_hash: String,
    pub vocabulary: Vocabulary,
    pub answers: AnswerVocabulary,
    pub params: Vec<ParamShape>,
}

/// Writes `path` (blob) and its `.json` manifest.
pub fn save_checkpoint<T: Scalar>(model: &QaModel<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(model.store.scalar_count() * T::BYTES);
    let mut params = Vec::with_capacity(model.store.len());
    for (_, name, m) in model.store.iter() {
        params.push(ParamShape {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
        });
        for &v in m.data() {
            v.write_le(&mut bytes);
        }
    }
    let manifest = CheckpointManifest {
        dtype: T::DTYPE.into(),
        config: model.config.clone(),
        vocabulary_hash: model.vocab.hash(),
        vocabulary: model.vocab.clone(),
        answers: model.answers.clone(),
        params,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<QaModel<T>> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("manifest {}: {e}", side.display())))?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!("checkpoint holds {}, requested {}", manifest.dtype, T::DTYPE)));
    }
    if manifest.vocabulary.hash() != manifest.vocabulary_hash {
        return Err(Error::VocabularyMismatch {
            expected: manifest.vocabulary_hash,
            found: manifest.vocabulary.hash(),
        });
    }
    let mut model = QaModel::<T>::new(manifest.config, manifest.vocabulary, manifest.answers, 0)?;
    let expected: Vec<ParamShape> = model
        .store
        .iter()
        .map(|(_, name, m)| ParamShape {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
        })
        .collect();
    if expected != manifest.params {
        return Err(Error::Checkpoint("parameter layout differs from the configured model".into()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let total: usize = expected.iter().map(|p| p.rows * p.cols).sum();
    if bytes.len() != total * T::BYTES {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, manifest describes {}",
            bytes.len(),
            total * T::BYTES
        )));
    }
    let mut values = bytes.chunks_exact(T::BYTES).map(T::read_le);
    let ids: Vec<_> = model.store.ids().collect();
    for (id, shape) in ids.into_iter().zip(&expected) {
        let data: Vec<T> = values.by_ref().take(shape.rows * shape.cols).collect();
        *model.store.get_mut(id) = Matrix::from_vec(shape.rows, shape.cols, data);
    }
    Ok(model)
}
