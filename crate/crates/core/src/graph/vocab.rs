use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SceneGraph;
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Lowercases, strips sentence punctuation and splits on whitespace.
/// `<unk>` survives as a single token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| matches!(c, '?' | '.' | ',' | '!' | ';' | ':' | '"'))
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word vocabulary shared by scene-graph text and questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = Error;

    fn try_from(file: VocabularyFile) -> Result<Self> {
        Vocabulary::from_tokens(file.tokens)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile { tokens: v.tokens }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list whose first two entries
    /// must be the PAD and UNK markers.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Vocabulary(
                "token list must start with <pad>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Unknown words map to [`UNK_ID`].
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// SHA-256 over the ordered token list; identifies the vocabulary in checkpoints.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Collects every word occurring at least `min_count` times in node names,
/// attributes, relation names and question texts. Tokens after PAD/UNK are
/// sorted lexicographically.
pub fn build_vocabulary<'a>(
    graphs: &[SceneGraph],
    question_texts: impl IntoIterator<Item = &'a str>,
    min_count: usize,
) -> Result<Vocabulary> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut bump = |text: &str| {
        for w in tokenize(text) {
            *counts.entry(w).or_default() += 1;
        }
    };
    let mut questions = 0usize;
    for text in question_texts {
        questions += 1;
        bump(text);
    }
    for g in graphs {
        for node in g.nodes() {
            bump(&node.name);
            for a in &node.attributes {
                bump(a);
            }
        }
        for e in g.edges() {
            bump(&e.relation);
        }
    }
    if graphs.is_empty() && questions == 0 {
        return Err(Error::Empty("vocabulary corpus has no graphs and no questions".into()));
    }
    let min_count = min_count.max(1);
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(
        counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
            .map(|(t, _)| t),
    );
    Vocabulary::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ObjectNode, RelationEdge};

    fn graph() -> SceneGraph {
        SceneGraph::new(
            "1",
            vec![
                ObjectNode::new("red apple", vec![]),
                ObjectNode::new("table", vec!["wooden".into()]),
            ],
            vec![RelationEdge::new("on top of", 0, 1)],
        )
        .unwrap()
    }

    #[test]
    fn multiword_names_are_split() {
        let v = build_vocabulary(&[graph()], [], 1).unwrap();
        assert_ne!(v.id("red"), UNK_ID);
        assert_ne!(v.id("apple"), UNK_ID);
        assert_ne!(v.id("top"), UNK_ID);
        assert_eq!(v.id("red apple"), UNK_ID);
    }

    #[test]
    fn pad_and_unk_are_fixed() {
        let v = build_vocabulary(&[graph()], ["is there a cup?"], 1).unwrap();
        assert_eq!(v.id(PAD_TOKEN), PAD_ID);
        assert_eq!(v.id(UNK_TOKEN), UNK_ID);
        assert_eq!(v.id("never-seen"), UNK_ID);
        assert_eq!(v.encode("Is there a CUP?"), vec![v.id("is"), v.id("there"), v.id("a"), v.id("cup")]);
    }

    #[test]
    fn min_count_sends_rare_tokens_to_unk() {
        let v = build_vocabulary(&[graph()], ["apple apple"], 2).unwrap();
        assert_ne!(v.id("apple"), UNK_ID);
        assert_eq!(v.id("table"), UNK_ID);
    }

    #[test]
    fn index_is_a_bijection() {
        let v = build_vocabulary(&[graph()], ["what is on top of the table"], 1).unwrap();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t) as usize, i);
            assert_eq!(v.token(i as u32), Some(t.as_str()));
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocabulary(&[], [], 1).is_err());
    }

    #[test]
    fn unk_marker_in_graph_text_stays_unk() {
        let g = SceneGraph::new("u", vec![ObjectNode::new(UNK_TOKEN, vec![])], vec![]).unwrap();
        let v = build_vocabulary(&[g], [], 1).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.encode(UNK_TOKEN), vec![UNK_ID]);
    }

    #[test]
    fn serde_round_trip_and_hash() {
        let v = build_vocabulary(&[graph()], ["is there a cup"], 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        let other = build_vocabulary(&[graph()], [], 1).unwrap();
        assert_ne!(other.hash(), v.hash());
    }
}
