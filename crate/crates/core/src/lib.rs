//! Scene-graph visual question answering toolkit.
//!
//! Scene graphs are encoded with a Graph Network into a stacked node/global
//! matrix, which attention and MAC-style heads read to pick an answer. The
//! crate also carries the ground-truth/noisy training curriculum, graph
//! degradation and filtering tools, evaluation, and a synthetic mini-world
//! with a brute-force answer oracle for desk-scale experiments.

pub mod encoder;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod models;
pub mod nn;
pub mod perturb;
pub mod pipeline;
pub mod question;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
pub use graph::{ObjectNode, RelationEdge, SceneGraph, Vocabulary};
