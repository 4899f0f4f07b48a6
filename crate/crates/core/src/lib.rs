//! Pseudo caption labeling for open-vocabulary detection.
//!
//! The crate turns symbolic detection annotations into per-object caption
//! label sets, trains a linear detection head against text embeddings of
//! those labels, and evaluates box AP on held-out rare classes.

pub mod caption;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod jsonl;
pub mod labels;
pub mod matching;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
