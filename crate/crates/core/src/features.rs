//! Per-image feature tensors and their on-disk blob format.
//!
//! A blob is a little-endian `f32` row-major file next to a JSON sidecar
//! describing the shape: for each image, in order, its object rows followed
//! by one spatial row. Per-question vectors for late fusion reuse the same
//! format with zero object rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

/// Object features `O` (one row per object) and the whole-image vector `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub objects: Matrix<f32>,
    pub spatial: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub dtype: String,
    pub object_dim: usize,
    pub spatial_dim: usize,
    pub images: Vec<FeatureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub image_id: String,
    pub objects: usize,
}

/// Sidecar path for a blob: `x.bin` -> `x.json`.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

pub fn write_feature_blob(path: &Path, features: &BTreeMap<String, ImageFeatures>) -> Result<()> {
    let first = features.values().next();
    let object_dim = first.map_or(0, |f| f.objects.cols());
    let spatial_dim = first.map_or(0, |f| f.spatial.len());
    let mut bytes = Vec::new();
    let mut images = Vec::with_capacity(features.len());
    for (id, f) in features {
        if (f.objects.rows() > 0 && f.objects.cols() != object_dim) || f.spatial.len() != spatial_dim {
            return Err(Error::Feature(format!("image '{id}' has inconsistent feature widths")));
        }
        for &v in f.objects.data().iter().chain(&f.spatial) {
            v.write_le(&mut bytes);
        }
        images.push(FeatureEntry {
            image_id: id.clone(),
            objects: f.objects.rows(),
        });
    }
    let header = FeatureHeader {
        dtype: f32::DTYPE.into(),
        object_dim,
        spatial_dim,
        images,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_feature_blob(path: &Path) -> Result<BTreeMap<String, ImageFeatures>> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let header: FeatureHeader =
        serde_json::from_str(&text).map_err(|e| Error::Feature(format!("malformed feature header {}: {e}", side.display())))?;
    if header.dtype != f32::DTYPE {
        return Err(Error::Feature(format!("unsupported feature dtype '{}'", header.dtype)));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected: usize = header
        .images
        .iter()
        .map(|e| e.objects * header.object_dim + header.spatial_dim)
        .sum::<usize>()
        * f32::BYTES;
    if bytes.len() != expected {
        return Err(Error::Feature(format!(
            "feature blob has {} bytes, header describes {expected}",
            bytes.len()
        )));
    }
    let mut values = bytes.chunks_exact(f32::BYTES).map(f32::read_le);
    let mut out = BTreeMap::new();
    for entry in header.images {
        let objects: Vec<f32> = values.by_ref().take(entry.objects * header.object_dim).collect();
        let spatial: Vec<f32> = values.by_ref().take(header.spatial_dim).collect();
        out.insert(
            entry.image_id,
            ImageFeatures {
                objects: Matrix::from_vec(entry.objects, header.object_dim, objects),
                spatial,
            },
        );
    }
    Ok(out)
}

/// Reads a per-question vector table (blob with zero object rows).
pub fn read_vector_table(path: &Path) -> Result<BTreeMap<String, Vec<f32>>> {
    Ok(read_feature_blob(path)?.into_iter().map(|(k, f)| (k, f.spatial)).collect())
}

pub fn write_vector_table(path: &Path, vectors: &BTreeMap<String, Vec<f32>>) -> Result<()> {
    let features = vectors
        .iter()
        .map(|(k, v)| {
            (
                k.clone(),
                ImageFeatures {
                    objects: Matrix::zeros(0, 0),
                    spatial: v.clone(),
                },
            )
        })
        .collect();
    write_feature_blob(path, &features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let mut map = BTreeMap::new();
        map.insert(
            "a".to_string(),
            ImageFeatures {
                objects: Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, f32::MIN_POSITIVE]),
                spatial: vec![0.5, -0.25],
            },
        );
        map.insert(
            "b".to_string(),
            ImageFeatures {
                objects: Matrix::from_vec(1, 3, vec![7.0, 8.0, 9.0]),
                spatial: vec![1.0, 1.0],
            },
        );
        write_feature_blob(&path, &map).unwrap();
        assert_eq!(read_feature_blob(&path).unwrap(), map);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let mut map = BTreeMap::new();
        map.insert("q".to_string(), vec![1.0f32, 2.0]);
        write_vector_table(&path, &map).unwrap();
        assert_eq!(read_vector_table(&path).unwrap(), map);
        std::fs::write(&path, [0u8; 5]).unwrap();
        assert!(matches!(read_feature_blob(&path), Err(Error::Feature(_))));
    }

    #[test]
    fn malformed_header_is_a_feature_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        std::fs::write(&path, []).unwrap();
        std::fs::write(sidecar_path(&path), "{\"dtype\": 3}").unwrap();
        assert!(matches!(read_feature_blob(&path), Err(Error::Feature(_))));
    }
}
