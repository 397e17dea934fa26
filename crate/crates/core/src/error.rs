use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Conllu { line: usize, message: String },

    #[error("invalid tree in sentence '{sent_id}': {violations}")]
    InvalidTree { sent_id: String, violations: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("column {0} has no finite score")]
    EmptyColumn(usize),

    #[error("degenerate Laplacian: {0}")]
    Degenerate(String),

    #[error("enumeration bound exceeded: n = {n} > {max}")]
    TooLarge { n: usize, max: usize },

    #[error("embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("no embedding for sentence '{sent_id}' subword position {position}")]
    MissingEmbedding { sent_id: String, position: usize },

    #[error("label '{0}' is not in the label inventory")]
    UnknownLabel(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("analysis: {0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
