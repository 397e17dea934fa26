//! Graph-based dependency parsing with a globally normalized deep-biaffine
//! scorer over pooled subword representations.
//!
//! The pipeline runs CoNLL-U reading ([`treebank`]), WordPiece segmentation
//! and pooling ([`subword`]), subword vectors ([`embeddings`]), arc and label
//! scoring ([`scorer`]), tree-level normalization through the Matrix-Tree
//! Theorem ([`mtt`]), maximum spanning tree decoding ([`decoder`]),
//! optimization ([`trainer`]) and attachment scoring ([`eval`]). The
//! [`analysis`] module covers vocabulary-overlap and typology metrics and
//! the construction of multilingual training mixes.

pub mod analysis;
pub mod decoder;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mtt;
pub mod scorer;
pub mod subword;
pub mod synthetic;
pub mod trainer;
pub mod treebank;

pub use error::{Error, Result};
pub use ndarray;
