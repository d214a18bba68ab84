//! Five-column corpus format.
//!
//! ```text
//! # label: 1
//! 1    Cats    NNS    2    B-Term
//! 2    are    VBP    0    O
//! 3    felines    NNS    2    B-Definition
//! ```
//!
//! Columns are tab-separated. Blocks are separated by blank lines. The label header is `0`, `1` or `_`
//! and the tag column may be `_` throughout a block for unlabeled input.
//! A `# predicted` line marks model output, whose label may disagree with
//! its spans. Other `#` lines are ignored.

use std::fmt::Write;

use super::sentence::{tags_to_spans, validate_tree, BioError};
use super::{CorpusError, Sentence};

struct Block {
    first_line: usize,
    label: Option<Option<bool>>,
    predicted: bool,
    rows: Vec<(usize, Vec<String>)>,
}

fn err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<Sentence>, CorpusError> {
    let mut blocks = Vec::new();
    let mut cur: Option<Block> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            blocks.extend(cur.take());
            continue;
        }
        let block = cur.get_or_insert_with(|| Block {
            first_line: line_no,
            label: None,
            predicted: false,
            rows: Vec::new(),
        });
        if let Some(comment) = line.strip_prefix('#') {
            if comment.trim() == "predicted" {
                block.predicted = true;
            } else if let Some(value) = comment.trim().strip_prefix("label:") {
                if !block.rows.is_empty() || block.label.is_some() {
                    return Err(err(line_no, "label header must come first in its block"));
                }
                block.label = Some(match value.trim() {
                    "0" => Some(false),
                    "1" => Some(true),
                    "_" => None,
                    other => return Err(err(line_no, format!("bad label {other:?}"))),
                });
            }
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
        if cols.len() != 5 {
            return Err(err(line_no, format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        block.rows.push((line_no, cols));
    }
    blocks.extend(cur);

    blocks
        .into_iter()
        .filter(|b| !b.rows.is_empty())
        .map(parse_block)
        .collect()
}

fn parse_block(block: Block) -> Result<Sentence, CorpusError> {
    let n = block.rows.len();
    let mut tokens = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    let mut heads = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);

    for (k, (line_no, cols)) in block.rows.iter().enumerate() {
        let index: usize = cols[0]
            .parse()
            .map_err(|_| err(*line_no, format!("bad token index {:?}", cols[0])))?;
        if index != k + 1 {
            return Err(err(*line_no, format!("token index {index}, expected {}", k + 1)));
        }
        if cols[1].is_empty() || cols[2].is_empty() {
            return Err(err(*line_no, "empty form or POS"));
        }
        let head: usize = cols[3]
            .parse()
            .map_err(|_| err(*line_no, format!("bad head {:?}", cols[3])))?;
        if head > n {
            return Err(err(*line_no, format!("head {head} beyond sentence length {n}")));
        }
        tokens.push(cols[1].clone());
        pos.push(cols[2].clone());
        heads.push(head.checked_sub(1));
        tags.push(cols[4].clone());
    }

    validate_tree(&heads).map_err(|_| err(block.first_line, "head array is not a tree"))?;

    let unlabeled = tags.iter().filter(|t| *t == "_").count();
    if unlabeled != 0 && unlabeled != n {
        return Err(err(block.first_line, "tag column mixes `_` with tags"));
    }

    let mut sentence = Sentence {
        tokens,
        pos,
        heads,
        gold_tags: None,
        sent_label: block.label.flatten(),
        spans: Vec::new(),
        predicted: block.predicted,
    };
    if unlabeled == 0 {
        let spans = tags_to_spans(&tags).map_err(|e| {
            let position = match &e {
                BioError::Orphan { position, .. } | BioError::Unknown { position, .. } => *position,
            };
            err(block.rows[position].0, e.to_string())
        })?;
        sentence.spans = spans;
        sentence.gold_tags = Some(tags);
        if sentence.sent_label.is_none() {
            sentence.sent_label = Some(sentence.pair().is_some());
        }
    }
    sentence
        .validate()
        .map_err(|e| err(block.first_line, e.to_string()))?;
    Ok(sentence)
}

pub fn render_sentence(s: &Sentence, out: &mut String) {
    render_sentence_with(s, &[], out);
}

/// Like [`render_sentence`], with extra `# ...` comment lines after the
/// header. The parser skips them.
pub fn render_sentence_with(s: &Sentence, comments: &[String], out: &mut String) {
    let label = match s.sent_label {
        Some(true) => "1",
        Some(false) => "0",
        None => "_",
    };
    writeln!(out, "# label: {label}").unwrap();
    if s.predicted {
        writeln!(out, "# predicted").unwrap();
    }
    for c in comments {
        writeln!(out, "# {c}").unwrap();
    }
    for i in 0..s.len() {
        let head = s.heads[i].map_or(0, |h| h + 1);
        let tag = s.gold_tags.as_ref().map_or("_", |t| t[i].as_str());
        writeln!(out, "{}\t{}\t{}\t{}\t{}", i + 1, s.tokens[i], s.pos[i], head, tag).unwrap();
    }
}

pub fn render_corpus(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        render_sentence(s, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    #[test]
    fn three_token_block() {
        let text = "# label: 1\n1\tA\tNN\t2\tB-Term\n2\tis\tVBZ\t0\tO\n3\tB\tNN\t2\tB-Definition\n";
        let s = &parse_corpus(text).unwrap()[0];
        assert_eq!(s.term_span(), Some(Span::new(0, 0)));
        assert_eq!(s.def_span(), Some(Span::new(2, 2)));
        assert_eq!(s.sent_label, Some(true));
        assert_eq!(s.heads, vec![Some(1), None, Some(1)]);
    }

    #[test]
    fn all_outside_block() {
        let text = "# label: 0\n1\tdogs\tNNS\t2\tO\n2\tbark\tVBP\t0\tO\n";
        let s = &parse_corpus(text).unwrap()[0];
        assert!(s.spans.is_empty());
        assert_eq!(s.sent_label, Some(false));
    }

    #[test]
    fn two_cycle_is_rejected() {
        let text = "# label: 0\n1\ta\tDT\t2\tO\n2\tb\tNN\t1\tO\n3\tc\tVB\t0\tO\n";
        match parse_corpus(text) {
            Err(CorpusError::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("head array is not a tree"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn orphan_inside_reports_line() {
        let text = "# label: 0\n1\ta\tDT\t0\tO\n2\tb\tNN\t1\tI-Term\n";
        match parse_corpus(text) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line() {
        let text = "# label: 0\n1\ta\tDT\t0\n";
        assert!(matches!(parse_corpus(text), Err(CorpusError::Parse { line: 2, .. })));
    }

    #[test]
    fn unlabeled_input() {
        let text = "# label: _\n1\ta\tDT\t2\t_\n2\tb\tNN\t0\t_\n";
        let s = &parse_corpus(text).unwrap()[0];
        assert!(s.gold_tags.is_none());
        assert!(s.sent_label.is_none());
        assert_eq!(render_corpus(std::slice::from_ref(s)), text);
    }

    #[test]
    fn label_disagreeing_with_spans() {
        let text = "# label: 1\n1\tdogs\tNNS\t2\tO\n2\tbark\tVBP\t0\tO\n";
        assert!(parse_corpus(text).is_err());
    }
}
