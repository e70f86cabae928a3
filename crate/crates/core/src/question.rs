//! Questions, semantic types and the answer vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Vocabulary;
use crate::world::Program;

/// GQA's five-way question taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticType {
    Relation,
    Attribute,
    Object,
    Category,
    Global,
}

impl SemanticType {
    pub const ALL: [SemanticType; 5] = [
        SemanticType::Relation,
        SemanticType::Attribute,
        SemanticType::Object,
        SemanticType::Category,
        SemanticType::Global,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::Relation => "relation",
            SemanticType::Attribute => "attribute",
            SemanticType::Object => "object",
            SemanticType::Category => "category",
            SemanticType::Global => "global",
        }
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticType {
    type Err = Error;

    /// Accepts full names and the GQA short codes (`rel`, `attr`, `obj`, `cat`, `global`).
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_lowercase().as_str() {
            "relation" | "rel" => SemanticType::Relation,
            "attribute" | "attr" => SemanticType::Attribute,
            "object" | "obj" => SemanticType::Object,
            "category" | "cat" => SemanticType::Category,
            "global" => SemanticType::Global,
            other => return Err(Error::Config(format!("unknown semantic type '{other}'"))),
        })
    }
}

/// A question in text form, as stored in question files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub text: String,
    pub answer: String,
    pub image_id: String,
    pub semantic_type: SemanticType,
    /// Executable form, present for generated questions.
    pub program: Option<Program>,
}

/// A tokenized question with its answer index.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSample {
    pub question_id: String,
    pub tokens: Vec<u32>,
    pub image_id: String,
    /// `None` when the gold answer is outside the answer vocabulary.
    pub answer: Option<usize>,
    pub semantic_type: SemanticType,
}

impl QuestionSample {
    pub fn from_question(q: &Question, vocab: &Vocabulary, answers: &AnswerVocabulary) -> Result<Self> {
        let tokens = vocab.encode(&q.text);
        if tokens.is_empty() {
            return Err(Error::Empty(format!("question '{}' has no tokens", q.question_id)));
        }
        Ok(Self {
            question_id: q.question_id.clone(),
            tokens,
            image_id: q.image_id.clone(),
            answer: answers.index(&q.answer),
            semantic_type: q.semantic_type,
        })
    }
}

/// Lowercase and trim; the only normalization applied to answers.
pub fn normalize_answer(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Ordered set of answer strings, built from training answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "AnswerList", into = "AnswerList")]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct AnswerList {
    answers: Vec<String>,
}

impl From<AnswerList> for AnswerVocabulary {
    fn from(l: AnswerList) -> Self {
        Self::from_sorted(l.answers)
    }
}

impl From<AnswerVocabulary> for AnswerList {
    fn from(v: AnswerVocabulary) -> Self {
        AnswerList { answers: v.answers }
    }
}

impl AnswerVocabulary {
    /// Distinct normalized answers in lexicographic order.
    pub fn build<'a>(answers: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut all: Vec<String> = answers.into_iter().map(normalize_answer).collect();
        all.sort();
        all.dedup();
        if all.is_empty() {
            return Err(Error::Empty("no training answers".into()));
        }
        Ok(Self::from_sorted(all))
    }

    fn from_sorted(answers: Vec<String>) -> Self {
        let index = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Self { answers, index }
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn index(&self, answer: &str) -> Option<usize> {
        self.index.get(&normalize_answer(answer)).copied()
    }

    pub fn answer(&self, i: usize) -> &str {
        &self.answers[i]
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }
}

#[derive(Serialize, Deserialize)]
struct QuestionRecord {
    question: String,
    answer: String,
    #[serde(rename = "imageId")]
    image_id: String,
    #[serde(rename = "semanticType", default, skip_serializing_if = "Option::is_none")]
    semantic_type: Option<String>,
    #[serde(default, skip_serializing)]
    types: Option<GqaTypes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    program: Option<Program>,
}

#[derive(Deserialize)]
struct GqaTypes {
    semantic: Option<String>,
}

/// Parses a questions document (`question_id -> record`), ordered by id.
pub fn parse_questions(text: &str) -> Result<Vec<Question>> {
    let doc: BTreeMap<String, QuestionRecord> = serde_json::from_str(text).map_err(|e| Error::json(text, e))?;
    doc.into_iter()
        .map(|(id, r)| {
            let code = r
                .semantic_type
                .or_else(|| r.types.and_then(|t| t.semantic))
                .ok_or_else(|| Error::Schema {
                    key: id.clone(),
                    message: "missing semantic type".into(),
                })?;
            Ok(Question {
                semantic_type: code.parse()?,
                question_id: id,
                text: r.question,
                answer: r.answer,
                image_id: r.image_id,
                program: r.program,
            })
        })
        .collect()
}

pub fn questions_to_string(questions: &[Question]) -> Result<String> {
    let doc: BTreeMap<&str, QuestionRecord> = questions
        .iter()
        .map(|q| {
            (
                q.question_id.as_str(),
                QuestionRecord {
                    question: q.text.clone(),
                    answer: q.answer.clone(),
                    image_id: q.image_id.clone(),
                    semantic_type: Some(q.semantic_type.as_str().to_string()),
                    types: None,
                    program: q.program.clone(),
                },
            )
        })
        .collect();
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Document {
        offset: 0,
        message: e.to_string(),
    })
}

pub fn read_questions(path: &Path) -> Result<Vec<Question>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_questions(&text)
}

pub fn write_questions(path: &Path, questions: &[Question]) -> Result<()> {
    std::fs::write(path, questions_to_string(questions)?).map_err(|e| Error::io(path, e))
}
