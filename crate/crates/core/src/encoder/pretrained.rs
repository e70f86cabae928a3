//! Plain-text word vectors: one token followed by its floats per line.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Vocabulary;
use crate::tensor::{ParamId, ParamStore, Scalar};

pub fn parse_word_vectors(text: &str) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Feature(format!("word vectors line {}: {e}", n + 1)))?;
        if n == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
            // "count dim" header
            continue;
        }
        if values.is_empty() {
            continue;
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Feature(format!(
                    "word vectors line {}: {} values, expected {w}",
                    n + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        out.insert(token.to_lowercase(), values);
    }
    Ok(out)
}

/// Overwrites embedding rows of tokens present in the file. Returns how many
/// vocabulary tokens were found.
pub fn load_word_vectors<T: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    store: &mut ParamStore<T>,
    embedding: ParamId,
) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vectors = parse_word_vectors(&text)?;
    let table = store.get_mut(embedding);
    if table.rows() != vocab.len() {
        return Err(Error::Shape(format!("embedding has {} rows for {} tokens", table.rows(), vocab.len())));
    }
    let mut found = 0;
    for (i, token) in vocab.tokens().iter().enumerate() {
        let Some(v) = vectors.get(token) else { continue };
        if v.len() != table.cols() {
            return Err(Error::Shape(format!("word vectors have width {}, embedding {}", v.len(), table.cols())));
        }
        for (dst, &src) in table.row_mut(i).iter_mut().zip(v) {
            *dst = T::lit(src);
        }
        found += 1;
    }
    Ok(found)
}
