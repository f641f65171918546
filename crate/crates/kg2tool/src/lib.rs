//! Knowledge-graph-driven synthesis of tool-use instruction data.
//!
//! The pipeline loads a triple store, samples subgraphs matching 14
//! first-order-logic query patterns, derives callable APIs from relation
//! types, lowers each query to a post-order execution chain, executes the
//! chain against the graph to record a verified solution path, and emits
//! dialogue-format training records in ShareGPT or Alpaca JSONL.

pub mod api;
pub mod audit;
pub mod error;
pub mod fol;
pub mod instruction;
pub mod kg;
pub mod llm;
pub mod patterns;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod set;
pub mod solution;
pub mod translate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, ErrorClass, Result};
pub use kg::{DirectedRelation, Direction, EntityId, KnowledgeGraph, LoadMode, RelationId, Triple};
pub use patterns::{PatternTag, ALL_PATTERNS};
pub use set::EntitySet;
