//! Sentence-level informational bias detection over event-structured news.
//!
//! The pipeline has four learned or derived stages, each in its own module:
//!
//! 1. [`corpus`]: validated sentence records and event-wise cross-validation
//!    folds, plus a synthetic corpus generator with planted bias signal.
//! 2. [`triplets`] and [`encoder`]: contrastive triplet mining and an
//!    InfoNCE-trained projection producing contrastive sentence embeddings.
//! 3. [`text`] and [`graph`]: lexical signals and the event-scoped relational
//!    sentence graph with four edge families.
//! 4. [`ssgat`]: a graph attention node classifier with an auxiliary
//!    edge-presence loss.
//!
//! [`eval`] ties the stages together into the cross-validation and ablation
//! harness. Everything here is `no_std` + `alloc`; file formats and the CLI
//! live in the `multictx` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod encoder;
mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod seed;
pub mod ssgat;
pub mod synth;
pub mod text;
pub mod triplets;

pub use corpus::{Corpus, FoldPlan, Label, SentenceRecord};
pub use encoder::{EmbeddingTable, EncoderParams};
pub use error::{Error, Result};
pub use graph::{EdgeType, EdgeTypes, SentenceGraph};
