use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub answer: String,
    pub probability: f64,
}

pub fn predictions_to_jsonl(predictions: &[Prediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    std::fs::write(path, predictions_to_jsonl(predictions)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            let p = serde_json::from_str(line).map_err(|e| Error::Document {
                offset: offset + e.column().saturating_sub(1),
                message: e.to_string(),
            })?;
            out.push(p);
        }
        offset += line.len();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let preds = vec![
            Prediction {
                question_id: "a".into(),
                answer: "yes".into(),
                probability: 0.7312,
            },
            Prediction {
                question_id: "b".into(),
                answer: "to the left".into(),
                probability: 1.0 / 3.0,
            },
        ];
        write_predictions(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);
    }

    #[test]
    fn bad_line_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(&path, "{\"question_id\":\"a\",\"answer\":\"x\",\"probability\":1}\n{oops\n").unwrap();
        match read_predictions(&path).unwrap_err() {
            Error::Document { offset, .. } => assert!(offset >= 49),
            other => panic!("{other:?}"),
        }
    }
}
