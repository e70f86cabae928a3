use serde::{Deserialize, Serialize};

use crate::graph::SceneGraph;

/// Executable form of a generated question.
///
/// Every variant carries the vocabulary it needs, so a stored program can be
/// re-run against a graph without the generator's configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Program {
    /// Name of the receiver of the only `relation` edge leaving the only `subject`.
    RelationTarget { subject: String, relation: String },
    /// The single attribute of the only `subject` that lies in `choices`.
    AttributeOf { subject: String, choices: Vec<String> },
    /// `yes` when any object carries one of `names`.
    Exists { names: Vec<String> },
    /// Name of the only object named in `members` that has attribute `attribute`.
    Member { members: Vec<String>, attribute: String },
    /// The single attribute of the only `holder` that lies in `choices`.
    Global { holder: String, choices: Vec<String> },
}

impl Program {
    /// Brute-force answer over `g`, or `None` when the question is ambiguous
    /// or has no answer in this scene.
    pub fn execute(&self, g: &SceneGraph) -> Option<String> {
        match self {
            Program::RelationTarget { subject, relation } => {
                let s = unique_named(g, subject)?;
                let mut hits = g
                    .edges()
                    .iter()
                    .filter(|e| e.source == s && e.relation == *relation);
                let edge = hits.next()?;
                if hits.next().is_some() {
                    return None;
                }
                Some(g.nodes()[edge.receiver].name.clone())
            }
            Program::AttributeOf { subject, choices } => {
                let s = unique_named(g, subject)?;
                single_choice(&g.nodes()[s].attributes, choices)
            }
            Program::Exists { names } => {
                let found = g.nodes().iter().any(|n| names.contains(&n.name));
                Some(if found { "yes" } else { "no" }.to_string())
            }
            Program::Member { members, attribute } => {
                let mut hits = g
                    .nodes()
                    .iter()
                    .filter(|n| members.contains(&n.name) && n.attributes.contains(attribute));
                let node = hits.next()?;
                if hits.next().is_some() {
                    return None;
                }
                Some(node.name.clone())
            }
            Program::Global { holder, choices } => {
                let s = unique_named(g, holder)?;
                single_choice(&g.nodes()[s].attributes, choices)
            }
        }
    }
}

fn unique_named(g: &SceneGraph, name: &str) -> Option<usize> {
    let mut hits = g.nodes().iter().enumerate().filter(|(_, n)| n.name == name);
    let (i, _) = hits.next()?;
    if hits.next().is_some() {
        return None;
    }
    Some(i)
}

fn single_choice(attributes: &[String], choices: &[String]) -> Option<String> {
    let mut hits = attributes.iter().filter(|a| choices.contains(a));
    let a = hits.next()?;
    if hits.any(|b| b != a) {
        return None;
    }
    Some(a.clone())
}
