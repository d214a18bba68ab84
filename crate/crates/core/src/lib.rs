//! Joint definition extraction: sentence classification and BIO tagging over
//! dependency-parsed sentences, with a GCN syntactic encoder, dependency-path
//! supervision and semantic-consistency objectives.
//!
//! Everything runs on a small reverse-mode differentiation engine
//! ([`autodiff`]) over dense `f64` matrices.

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod consistency;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod dep_path;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod par;
pub mod params;
pub mod trainer;
pub mod verify;

pub use corpus::{parse_corpus, render_corpus, Sentence, TagSchema, TagSet, Vocab};
pub use model::{Example, Model, Prediction};
pub use params::{Hyperparams, ModelParams};
