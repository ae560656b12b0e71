//! Named-entity recognition with a chat model, guided by label statistics
//! from an annotated training split.
//!
//! The pipeline: count how each training token is labelled ([`stats`]),
//! retrieve demonstrations for each query ([`retriever`]), extract entities
//! with an in-context prompt ([`prompt`], [`llm`]), revise the extraction in
//! targeted reflection passes ([`reflect`]), and score it ([`eval`]).

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod fixtures;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod reflect;
pub mod report;
pub mod retriever;
pub mod stats;

pub use error::{Error, Result};
