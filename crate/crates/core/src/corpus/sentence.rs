use std::fmt;

use super::CorpusError;

/// Annotated span types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpanKind {
    Term,
    Definition,
    Qualifier,
}

impl SpanKind {
    pub const ALL: [SpanKind; 3] = [SpanKind::Term, SpanKind::Definition, SpanKind::Qualifier];

    pub fn label(self) -> &'static str {
        match self {
            SpanKind::Term => "Term",
            SpanKind::Definition => "Definition",
            SpanKind::Qualifier => "Qualifier",
        }
    }

    pub fn from_label(s: &str) -> Option<SpanKind> {
        SpanKind::ALL.into_iter().find(|k| k.label() == s)
    }
}

impl fmt::Display for SpanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Inclusive token range, 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledSpan {
    pub kind: SpanKind,
    pub span: Span,
}

/// Why a BIO sequence could not be turned into spans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BioError {
    /// `I-X` at `position` without a preceding `B-X`/`I-X`.
    Orphan { position: usize, tag: String },
    Unknown { position: usize, tag: String },
}

impl fmt::Display for BioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioError::Orphan { position, tag } => {
                write!(f, "tag {tag} at token {} does not continue a span", position + 1)
            }
            BioError::Unknown { position, tag } => {
                write!(f, "unknown tag {tag} at token {}", position + 1)
            }
        }
    }
}

enum Bio {
    Outside,
    Begin(SpanKind),
    Inside(SpanKind),
}

fn split_tag(tag: &str) -> Option<Bio> {
    if tag == "O" {
        return Some(Bio::Outside);
    }
    let (prefix, kind) = tag.split_once('-')?;
    let kind = SpanKind::from_label(kind)?;
    match prefix {
        "B" => Some(Bio::Begin(kind)),
        "I" => Some(Bio::Inside(kind)),
        _ => None,
    }
}

fn spans_from_tags<S: AsRef<str>>(tags: &[S], lenient: bool) -> Result<Vec<LabeledSpan>, BioError> {
    let mut spans = Vec::new();
    let mut open: Option<LabeledSpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let bio = split_tag(tag).ok_or_else(|| BioError::Unknown {
            position: i,
            tag: tag.to_string(),
        })?;
        match bio {
            Bio::Outside => spans.extend(open.take()),
            Bio::Begin(kind) => {
                spans.extend(open.take());
                open = Some(LabeledSpan {
                    kind,
                    span: Span::new(i, i),
                });
            }
            Bio::Inside(kind) => match &mut open {
                Some(s) if s.kind == kind => s.span.end = i,
                _ if lenient => {
                    spans.extend(open.take());
                    open = Some(LabeledSpan {
                        kind,
                        span: Span::new(i, i),
                    });
                }
                _ => {
                    return Err(BioError::Orphan {
                        position: i,
                        tag: tag.to_string(),
                    })
                }
            },
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Strict BIO to spans: an `I-X` must continue a span of type `X`.
pub fn tags_to_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<LabeledSpan>, BioError> {
    spans_from_tags(tags, false)
}

/// Span extraction for decoder output: orphan `I-X` tags open a new span as
/// if they were `B-X`.
pub fn decode_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<LabeledSpan>, BioError> {
    spans_from_tags(tags, true)
}

/// Spans to BIO tags over `n` tokens.
pub fn spans_to_tags(n: usize, spans: &[LabeledSpan]) -> Vec<String> {
    let mut tags = vec!["O".to_string(); n];
    for s in spans {
        for i in s.span.indices() {
            let prefix = if i == s.span.start { "B" } else { "I" };
            tags[i] = format!("{prefix}-{}", s.kind);
        }
    }
    tags
}

/// A dependency-parsed sentence with optional gold annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    /// Original word forms.
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    /// 0-based head index per token; `None` for the root.
    pub heads: Vec<Option<usize>>,
    pub gold_tags: Option<Vec<String>>,
    pub sent_label: Option<bool>,
    /// Every labeled span, ordered by start.
    pub spans: Vec<LabeledSpan>,
    /// Tags and label come from a model rather than annotators, so the label
    /// need not agree with the spans.
    pub predicted: bool,
}

impl Sentence {
    /// Unannotated sentence. Validates lengths and tree shape.
    pub fn new(tokens: Vec<String>, pos: Vec<String>, heads: Vec<Option<usize>>) -> Result<Self, CorpusError> {
        let s = Sentence {
            tokens,
            pos,
            heads,
            gold_tags: None,
            sent_label: None,
            spans: Vec::new(),
            predicted: false,
        };
        s.validate()?;
        Ok(s)
    }

    /// Attaches gold BIO tags; spans and the sentence label are derived.
    pub fn with_gold_tags(mut self, tags: Vec<String>) -> Result<Self, CorpusError> {
        let spans = tags_to_spans(&tags).map_err(CorpusError::Bio)?;
        self.spans = spans;
        self.gold_tags = Some(tags);
        self.sent_label = Some(self.term_span().is_some() && self.def_span().is_some());
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn first_of(&self, kind: SpanKind) -> Option<Span> {
        self.spans
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.span)
            .min_by_key(|s| s.start)
    }

    /// First term span by start index; the one that feeds the path and
    /// consistency objectives.
    pub fn term_span(&self) -> Option<Span> {
        self.first_of(SpanKind::Term)
    }

    pub fn def_span(&self) -> Option<Span> {
        self.first_of(SpanKind::Definition)
    }

    /// The term/definition pair, if both exist.
    pub fn pair(&self) -> Option<(Span, Span)> {
        Some((self.term_span()?, self.def_span()?))
    }

    pub fn qualifier_spans(&self) -> Vec<Span> {
        self.spans
            .iter()
            .filter(|s| s.kind == SpanKind::Qualifier)
            .map(|s| s.span)
            .collect()
    }

    pub fn has_qualifier(&self) -> bool {
        self.spans.iter().any(|s| s.kind == SpanKind::Qualifier)
    }

    /// Children lists derived from the head array.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (i, h) in self.heads.iter().enumerate() {
            if let Some(h) = h {
                children[*h].push(i);
            }
        }
        children
    }

    pub fn root(&self) -> usize {
        self.heads
            .iter()
            .position(Option::is_none)
            .expect("validated tree has a root")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(CorpusError::Invalid("sentence has no tokens".into()));
        }
        if self.pos.len() != n || self.heads.len() != n {
            return Err(CorpusError::Invalid(format!(
                "column lengths differ: {} tokens, {} pos, {} heads",
                n,
                self.pos.len(),
                self.heads.len()
            )));
        }
        validate_tree(&self.heads)?;

        let mut sorted = self.spans.clone();
        sorted.sort_by_key(|s| s.span.start);
        for s in &sorted {
            if s.span.start > s.span.end || s.span.end >= n {
                return Err(CorpusError::Invalid(format!(
                    "span {:?} out of bounds for {n} tokens",
                    s.span
                )));
            }
        }
        for w in sorted.windows(2) {
            if w[1].span.start <= w[0].span.end {
                return Err(CorpusError::Invalid(format!(
                    "spans {:?} and {:?} overlap",
                    w[0].span, w[1].span
                )));
            }
        }

        if let Some(tags) = &self.gold_tags {
            if tags.len() != n {
                return Err(CorpusError::Invalid(format!(
                    "{} gold tags for {n} tokens",
                    tags.len()
                )));
            }
            if spans_to_tags(n, &self.spans) != *tags {
                return Err(CorpusError::Invalid("gold tags disagree with spans".into()));
            }
            let definitional = self.pair().is_some();
            if let (Some(label), false) = (self.sent_label, self.predicted) {
                if label != definitional {
                    return Err(CorpusError::Invalid(format!(
                        "sentence label {} but term/definition pair {}",
                        u8::from(label),
                        if definitional { "present" } else { "absent" }
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A head array is valid when exactly one token is the root and every
/// token reaches it.
pub fn validate_tree(heads: &[Option<usize>]) -> Result<(), CorpusError> {
    let n = heads.len();
    let roots = heads.iter().filter(|h| h.is_none()).count();
    if roots != 1 {
        return Err(CorpusError::NotATree(format!("{roots} roots")));
    }
    if let Some(bad) = heads.iter().flatten().find(|&&h| h >= n) {
        return Err(CorpusError::NotATree(format!("head {} out of range", bad + 1)));
    }
    // 0 = unvisited, 1 = on current walk, 2 = reaches root
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut walk = Vec::new();
        let mut cur = Some(start);
        while let Some(i) = cur {
            match state[i] {
                2 => break,
                1 => return Err(CorpusError::NotATree(format!("cycle through token {}", i + 1))),
                _ => {
                    state[i] = 1;
                    walk.push(i);
                    cur = heads[i];
                }
            }
        }
        for i in walk {
            state[i] = 2;
        }
    }
    Ok(())
}
