//! Redundancy-aware retrieval benchmark construction and evaluation.
//!
//! The pipeline turns a document corpus into multi-hop question/answer items
//! whose gold evidence accounts for information repeated across documents,
//! then scores retrievers and end-to-end RAG systems against them. All model
//! calls go through [`gateway::Gateway`]; the [`gateway::MockBackend`] makes
//! every stage runnable offline and deterministically.

pub mod atomics;
pub mod corpus;
pub mod crrf;
pub mod e2e;
pub mod evalkit;
pub mod fixtures;
pub mod gateway;
pub mod io;
pub mod pipeline;
pub mod qgen;
pub mod redundancy;
pub mod text;
