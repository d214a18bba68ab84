use std::collections::HashMap;

use super::Sentence;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const POS_UNK: usize = 0;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word and POS indices. Words are lowercased before lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    pos: Vec<String>,
    pos_index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_lists(Vec::new(), Vec::new())
    }
}

impl Vocab {
    /// Builds from lists that exclude the reserved entries.
    pub fn from_lists(words: Vec<String>, pos: Vec<String>) -> Self {
        let mut v = Vocab {
            words: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            word_index: HashMap::new(),
            pos: vec![UNK_TOKEN.to_string()],
            pos_index: HashMap::new(),
        };
        for (i, w) in v.words.iter().enumerate() {
            v.word_index.insert(w.clone(), i);
        }
        v.pos_index.insert(UNK_TOKEN.to_string(), POS_UNK);
        for w in words {
            v.add_word(&w);
        }
        for p in pos {
            v.add_pos(&p);
        }
        v
    }

    /// Vocabulary over every word and POS tag of `corpus`, in order of first
    /// appearance.
    pub fn build(corpus: &[Sentence]) -> Self {
        let mut v = Vocab::default();
        for s in corpus {
            for w in &s.tokens {
                v.add_word(w);
            }
            for p in &s.pos {
                v.add_pos(p);
            }
        }
        v
    }

    fn add_word(&mut self, w: &str) {
        let w = w.to_lowercase();
        if !self.word_index.contains_key(&w) {
            self.word_index.insert(w.clone(), self.words.len());
            self.words.push(w);
        }
    }

    fn add_pos(&mut self, p: &str) {
        if !self.pos_index.contains_key(p) {
            self.pos_index.insert(p.to_string(), self.pos.len());
            self.pos.push(p.to_string());
        }
    }

    pub fn word(&self, w: &str) -> usize {
        self.word_index.get(&w.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn pos(&self, p: &str) -> usize {
        self.pos_index.get(p).copied().unwrap_or(POS_UNK)
    }

    pub fn contains_word(&self, w: &str) -> bool {
        self.word_index.contains_key(&w.to_lowercase())
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_pos(&self) -> usize {
        self.pos.len()
    }

    /// All word entries, reserved ones included.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn pos_tags(&self) -> &[String] {
        &self.pos
    }

    /// Word entries without the reserved slots.
    pub fn user_words(&self) -> &[String] {
        &self.words[2..]
    }

    pub fn user_pos(&self) -> &[String] {
        &self.pos[1..]
    }
}
