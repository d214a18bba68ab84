//! Pretrained word vectors in whitespace-separated text form: one
//! `word v1 ... vd` entry per line. A leading `count dim` header line, as
//! written by word2vec tools, is skipped.

use std::collections::HashMap;

use rand::Rng;

use super::{CorpusError, Vocab};
use crate::autodiff::Tensor;

/// Half-width of the uniform range for rows without a pretrained vector.
pub const OOV_RANGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Every row drawn uniformly from `[-0.05, 0.05]`.
    pub fn random<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        EmbeddingTable {
            matrix: Tensor::uniform(rows, dim, OOV_RANGE, rng),
            dim,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }
}

/// How many vocabulary words received a pretrained vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coverage {
    pub found: usize,
    pub total: usize,
    pub missing: Vec<String>,
}

fn parse_vectors(text: &str) -> Result<(usize, HashMap<String, Vec<f64>>), CorpusError> {
    let mut dim = None;
    let mut vectors = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if idx == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let values = rest
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Parse {
                line: line_no,
                message: format!("bad vector component: {e}"),
            })?;
        if values.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("no vector for {word:?}"),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: format!("dimension {} differs from {d}", values.len()),
                })
            }
            _ => {}
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "non-finite vector component".into(),
            });
        }
        vectors.entry(word.to_lowercase()).or_insert(values);
    }
    let dim = dim.ok_or_else(|| CorpusError::Invalid("embedding file has no vectors".into()))?;
    Ok((dim, vectors))
}

/// Table over `vocab` initialized from `text`. Rows for words not in the
/// file, and the reserved rows, are sampled from `[-0.05, 0.05]`.
pub fn load_embeddings<R: Rng + ?Sized>(
    text: &str,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<(EmbeddingTable, Coverage), CorpusError> {
    let (dim, vectors) = parse_vectors(text)?;
    let mut table = EmbeddingTable::random(vocab.num_words(), dim, rng);
    let mut coverage = Coverage {
        found: 0,
        total: vocab.user_words().len(),
        missing: Vec::new(),
    };
    for (k, w) in vocab.user_words().iter().enumerate() {
        match vectors.get(w) {
            Some(v) => {
                table.matrix.row_mut(k + 2).copy_from_slice(v);
                coverage.found += 1;
            }
            None => coverage.missing.push(w.clone()),
        }
    }
    Ok((table, coverage))
}
