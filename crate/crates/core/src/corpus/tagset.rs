use std::fmt;

use super::sentence::SpanKind;
use super::{CorpusError, Sentence};

/// BIO label inventory plus the synthetic start state used by the CRF.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
}

/// Which span types a tag set covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagSchema {
    /// Term and definition: 5 tags.
    Basic,
    /// Term, definition and qualifier: 7 tags.
    Qualifier,
}

impl TagSchema {
    pub fn name(self) -> &'static str {
        match self {
            TagSchema::Basic => "basic",
            TagSchema::Qualifier => "qualifier",
        }
    }

    pub fn parse(s: &str) -> Option<TagSchema> {
        match s {
            "basic" => Some(TagSchema::Basic),
            "qualifier" => Some(TagSchema::Qualifier),
            _ => None,
        }
    }

    /// The smallest schema covering every span in `corpus`.
    pub fn detect(corpus: &[Sentence]) -> TagSchema {
        if corpus.iter().any(Sentence::has_qualifier) {
            TagSchema::Qualifier
        } else {
            TagSchema::Basic
        }
    }
}

impl fmt::Display for TagSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TagSet {
    pub fn new(schema: TagSchema) -> Self {
        let kinds: &[SpanKind] = match schema {
            TagSchema::Basic => &[SpanKind::Term, SpanKind::Definition],
            TagSchema::Qualifier => &SpanKind::ALL,
        };
        let mut tags = vec!["O".to_string()];
        for k in kinds {
            tags.push(format!("B-{k}"));
            tags.push(format!("I-{k}"));
        }
        TagSet { tags }
    }

    pub fn schema(&self) -> TagSchema {
        if self.tags.len() == 7 {
            TagSchema::Qualifier
        } else {
            TagSchema::Basic
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Row index of the synthetic START state in the transition matrix.
    pub fn start_state(&self) -> usize {
        self.tags.len()
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn encode(&self, tags: &[String]) -> Result<Vec<usize>, CorpusError> {
        tags.iter()
            .map(|t| {
                self.index(t).ok_or_else(|| {
                    CorpusError::Invalid(format!("tag {t} not in the {} tag set", self.schema()))
                })
            })
            .collect()
    }

    pub fn decode(&self, labels: &[usize]) -> Vec<String> {
        labels.iter().map(|&l| self.tags[l].clone()).collect()
    }

    /// Span class of a tag with the B/I prefix stripped; `None` for `O`.
    pub fn class_of(&self, index: usize) -> Option<&str> {
        self.tags[index].split_once('-').map(|(_, k)| k)
    }
}
