//! Retrieval-augmented medical dialogue generation with perplexity reranking
//! and term-level evaluation.
//!
//! The pipeline retrieves exemplar dialogues from two views (full history and
//! chief complaint + recent utterances), builds one prompt per strategy, asks a
//! completion provider for a candidate per prompt, and keeps the candidate a
//! scorer model finds least perplexing. Every neural component sits behind a
//! provider trait with a deterministic mock.

pub mod corpus;
pub mod generation;
pub mod metrics;
pub mod pipeline;
pub mod promptgen;
pub mod provider;
pub mod ranking;
pub mod retrieval;
pub mod vector;
