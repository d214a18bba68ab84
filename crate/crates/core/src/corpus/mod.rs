//! Corpus ingestion: sentences, BIO spans, vocabularies, pretrained vectors
//! and the synthetic corpus.

mod embeddings;
mod sentence;
mod synth;
mod tagset;
mod tsv;
mod vocab;

pub use embeddings::{load_embeddings, Coverage, EmbeddingTable, OOV_RANGE};
pub use sentence::{
    decode_spans, spans_to_tags, tags_to_spans, validate_tree, BioError, LabeledSpan, Sentence, Span,
    SpanKind,
};
pub use synth::make_synthetic_corpus;
pub use tagset::{TagSchema, TagSet};
pub use tsv::{parse_corpus, render_corpus, render_sentence, render_sentence_with};
pub use vocab::{Vocab, PAD, POS_UNK, UNK};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("head array is not a tree: {0}")]
    NotATree(String),
    #[error("{0}")]
    Bio(BioError),
    #[error("invalid sentence: {0}")]
    Invalid(String),
}
