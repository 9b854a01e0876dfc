//! Adjacency-list oriented relational fact extraction.
//!
//! The pipeline extracts (subject, relation, object) triples from text with a
//! three-stage cascade over a shared contextual encoder: subject span
//! extraction, per-subject object span extraction, and per-pair multi-label
//! relation classification. Training balances the three sub-task losses with
//! an EMA-driven dynamic weighting scheme and a lazy optimizer.
//!
//! Modules map onto the stages of the system:
//!
//! - [`corpus`]: dataset ingestion, overlap classification, sub-task example
//!   derivation, corpus statistics.
//! - [`encoding`]: tokenization, task input assembly, the shared encoder.
//! - [`heads`]: span / relation output layers, decoding, BCE loss.
//! - [`mtl`]: the adaptive multi-task trainer.
//! - [`pipeline`]: cascade inference producing adjacency-list outputs.
//! - [`evaluation`]: partial / exact match scoring with breakdowns.
//! - [`costmodel`]: predicted-logits cost analysis per model family.

pub mod corpus;
pub mod costmodel;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod fixture;
pub mod heads;
pub mod manifest;
pub mod model;
pub mod mtl;
pub mod pipeline;
pub mod tokenizer;
