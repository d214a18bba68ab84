//! Templated synthetic corpus with gold trees, spans and labels.
//!
//! Each template is a fixed dependency tree over slots; word choice is drawn
//! from small lexicons. Even-numbered sentences are definitional, odd ones
//! are not, and both kinds share the vocabulary so the label has to come from
//! structure.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sentence;

const TERMS: &[&str] = &[
    "algorithm", "enzyme", "glacier", "protocol", "sonnet", "isotope", "catalyst", "lexicon",
    "tariff", "neuron", "mortgage", "vaccine", "compiler", "estuary", "ligament", "parable",
];
const CATEGORIES: &[&str] = &[
    "method", "protein", "mass", "procedure", "poem", "variant", "substance", "list", "tax",
    "cell", "loan", "preparation", "program", "inlet", "tissue", "story",
];
const ADJECTIVES: &[&str] = &[
    "small", "formal", "large", "standard", "short", "common", "special", "simple", "chemical",
];
const VERBS: &[&str] = &[
    "converts", "connects", "describes", "contains", "produces", "regulates", "transforms",
    "protects",
];
const OBJECTS: &[&str] = &[
    "signals", "words", "ideas", "molecules", "files", "rivers", "bones", "values", "lessons",
    "payments",
];
const PAST: &[&str] = &["studied", "measured", "found", "built", "sold", "tested", "praised", "ignored"];
const PLACES: &[&str] = &["lab", "city", "report", "museum", "market", "clinic", "library", "valley"];
const PEOPLE: &[&str] = &["researchers", "students", "engineers", "farmers", "doctors", "critics"];

#[derive(Clone, Copy)]
enum Slot {
    Word(&'static str),
    Term,
    Category,
    Adjective,
    Verb,
    Object,
    Past,
    Place,
    People,
}

use Slot::*;

/// `(slot, pos, 1-based head, tag)`
type Row = (Slot, &'static str, usize, &'static str);

const DEFINITIONAL: &[&[Row]] = &[
    // a X is a ADJ CAT that VERB OBJ .
    &[
        (Word("a"), "DT", 2, "O"),
        (Term, "NN", 3, "B-Term"),
        (Word("is"), "VBZ", 0, "O"),
        (Word("a"), "DT", 6, "B-Definition"),
        (Adjective, "JJ", 6, "I-Definition"),
        (Category, "NN", 3, "I-Definition"),
        (Word("that"), "WDT", 8, "I-Definition"),
        (Verb, "VBZ", 6, "I-Definition"),
        (Object, "NNS", 8, "I-Definition"),
        (Word("."), ".", 3, "O"),
    ],
    // X refers to the CAT of OBJ .
    &[
        (Term, "NN", 2, "B-Term"),
        (Word("refers"), "VBZ", 0, "O"),
        (Word("to"), "TO", 2, "O"),
        (Word("the"), "DT", 5, "B-Definition"),
        (Category, "NN", 3, "I-Definition"),
        (Word("of"), "IN", 5, "I-Definition"),
        (Object, "NNS", 6, "I-Definition"),
        (Word("."), ".", 2, "O"),
    ],
    // we define ADJ X as a CAT which VERB OBJ .
    &[
        (Word("we"), "PRP", 2, "O"),
        (Word("define"), "VBP", 0, "O"),
        (Adjective, "JJ", 4, "B-Term"),
        (Term, "NN", 2, "I-Term"),
        (Word("as"), "IN", 7, "O"),
        (Word("a"), "DT", 7, "B-Definition"),
        (Category, "NN", 2, "I-Definition"),
        (Word("which"), "WDT", 9, "I-Definition"),
        (Verb, "VBZ", 7, "I-Definition"),
        (Object, "NNS", 9, "I-Definition"),
        (Word("."), ".", 2, "O"),
    ],
    // X , a CAT that VERB OBJ , is ADJ .
    &[
        (Term, "NN", 9, "B-Term"),
        (Word(","), ",", 1, "O"),
        (Word("a"), "DT", 4, "B-Definition"),
        (Category, "NN", 1, "I-Definition"),
        (Word("that"), "WDT", 6, "I-Definition"),
        (Verb, "VBZ", 4, "I-Definition"),
        (Object, "NNS", 6, "I-Definition"),
        (Word(","), ",", 1, "O"),
        (Word("is"), "VBZ", 0, "O"),
        (Adjective, "JJ", 9, "O"),
        (Word("."), ".", 9, "O"),
    ],
];

const NON_DEFINITIONAL: &[&[Row]] = &[
    // the PEOPLE PAST the X in the PLACE .
    &[
        (Word("the"), "DT", 2, "O"),
        (People, "NNS", 3, "O"),
        (Past, "VBD", 0, "O"),
        (Word("the"), "DT", 5, "O"),
        (Term, "NN", 3, "O"),
        (Word("in"), "IN", 3, "O"),
        (Word("the"), "DT", 8, "O"),
        (Place, "NN", 6, "O"),
        (Word("."), ".", 3, "O"),
    ],
    // a ADJ X was PAST by PEOPLE .
    &[
        (Word("a"), "DT", 3, "O"),
        (Adjective, "JJ", 3, "O"),
        (Term, "NN", 5, "O"),
        (Word("was"), "VBD", 5, "O"),
        (Past, "VBN", 0, "O"),
        (Word("by"), "IN", 5, "O"),
        (People, "NNS", 6, "O"),
        (Word("."), ".", 5, "O"),
    ],
    // the PEOPLE PAST OBJ that VERB the CAT .
    &[
        (Word("the"), "DT", 2, "O"),
        (People, "NNS", 3, "O"),
        (Past, "VBD", 0, "O"),
        (Object, "NNS", 3, "O"),
        (Word("that"), "WDT", 6, "O"),
        (Verb, "VBZ", 4, "O"),
        (Word("the"), "DT", 8, "O"),
        (Category, "NN", 6, "O"),
        (Word("."), ".", 3, "O"),
    ],
    // X is ADJ in the PLACE .
    &[
        (Term, "NN", 2, "O"),
        (Word("is"), "VBZ", 0, "O"),
        (Adjective, "JJ", 2, "O"),
        (Word("in"), "IN", 2, "O"),
        (Word("the"), "DT", 6, "O"),
        (Place, "NN", 4, "O"),
        (Word("."), ".", 2, "O"),
    ],
];

fn pick(rng: &mut ChaCha8Rng, words: &[&'static str]) -> &'static str {
    words.choose(rng).expect("non-empty lexicon")
}

fn fill(template: &[Row], rng: &mut ChaCha8Rng) -> Sentence {
    let mut tokens = Vec::with_capacity(template.len());
    let mut pos = Vec::with_capacity(template.len());
    let mut heads = Vec::with_capacity(template.len());
    let mut tags = Vec::with_capacity(template.len());
    for (slot, tag_pos, head, tag) in template {
        let word = match slot {
            Word(w) => w,
            Term => pick(rng, TERMS),
            Category => pick(rng, CATEGORIES),
            Adjective => pick(rng, ADJECTIVES),
            Verb => pick(rng, VERBS),
            Object => pick(rng, OBJECTS),
            Past => pick(rng, PAST),
            Place => pick(rng, PLACES),
            People => pick(rng, PEOPLE),
        };
        tokens.push(word.to_string());
        pos.push(tag_pos.to_string());
        heads.push(head.checked_sub(1));
        tags.push(tag.to_string());
    }
    if let Some(first) = tokens.first_mut() {
        let mut chars = first.chars();
        if let Some(c) = chars.next() {
            *first = c.to_uppercase().chain(chars).collect();
        }
    }
    Sentence::new(tokens, pos, heads)
        .and_then(|s| s.with_gold_tags(tags))
        .expect("templates are valid")
}

/// `n_sentences` templated sentences, alternating definitional and not.
pub fn make_synthetic_corpus(seed: u64, n_sentences: usize) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_sentences)
        .map(|i| {
            let pool = if i % 2 == 0 { DEFINITIONAL } else { NON_DEFINITIONAL };
            let template = *pool.choose(&mut rng).expect("non-empty template pool");
            fill(template, &mut rng)
        })
        .collect()
}
