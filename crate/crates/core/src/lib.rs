//! Toolkit for named entity disambiguation built around distantly supervised
//! mention typing: corpus ingestion, context extraction, embedding training,
//! entity clustering, neural typing models, fuzzy candidate generation,
//! feature extraction, and a two-stage neural ranker with evaluation tools.

pub mod artifact;
pub mod candgen;
pub mod clustering;
pub mod contexts;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod nn;
pub mod typing;

pub use error::{Error, Result};
