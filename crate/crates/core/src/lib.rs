//! Ontology-free dialogue state tracking.
//!
//! An instruction-following model is prompted to emit `<domain, slot, value>`
//! triples for each user turn; the triples are parsed, scored against gold
//! annotations, and accumulated into a bipartite domain / slot-value graph on
//! which a variational graph auto-encoder ranks likely next dialogue states.

pub mod dataset_io;
pub mod dialogue_model;
pub mod link_eval;
pub mod llm_backend;
pub mod prompt_engine;
pub mod metrics;
pub mod state_graph;
pub mod state_parser;
pub mod vgae;

pub use dialogue_model::{DialogueContext, DialogueState, Speaker, StateTriple, Turn};
