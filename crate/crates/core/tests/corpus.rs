use defx::corpus::{
    decode_spans, parse_corpus, render_corpus, spans_to_tags, tags_to_spans, CorpusError, LabeledSpan, Sentence,
    Span, SpanKind, TagSchema, TagSet,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tree(n: usize, seed: u64) -> Vec<Option<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut heads = vec![None; n];
    for k in 1..n {
        heads[order[k]] = Some(order[rng.gen_range(0..k)]);
    }
    heads
}

/// Non-overlapping spans laid out left to right from (gap, kind, length)
/// segments.
fn layout(n: usize, segments: &[(usize, usize, usize)]) -> Vec<LabeledSpan> {
    let mut spans = Vec::new();
    let mut at = 0;
    for &(gap, kind, len) in segments {
        let start = at + gap;
        let end = start + len - 1;
        if end >= n {
            break;
        }
        spans.push(LabeledSpan {
            kind: SpanKind::ALL[kind],
            span: Span::new(start, end),
        });
        at = end + 1;
    }
    spans
}

fn sentence_strategy() -> impl Strategy<Value = Sentence> {
    (1usize..14)
        .prop_flat_map(|n| {
            (
                Just(n),
                any::<u64>(),
                prop::collection::vec("[a-zA-Z0-9,.()'-]{1,8}", n),
                prop::collection::vec("[A-Z]{2,4}", n),
                prop::collection::vec((0usize..3, 0usize..3, 1usize..4), 0..4),
            )
        })
        .prop_map(|(n, seed, tokens, pos, segments)| {
            let s = Sentence::new(tokens, pos, tree(n, seed)).unwrap();
            let tags = spans_to_tags(n, &layout(n, &segments));
            s.with_gold_tags(tags).unwrap()
        })
}

proptest! {
    #[test]
    fn render_parse_round_trip(corpus in prop::collection::vec(sentence_strategy(), 1..5)) {
        let text = render_corpus(&corpus);
        let parsed = parse_corpus(&text).unwrap();
        prop_assert_eq!(&parsed, &corpus);
        prop_assert_eq!(render_corpus(&parsed), text);
    }

    #[test]
    fn spans_tags_round_trip(n in 1usize..20, segments in prop::collection::vec((0usize..3, 0usize..3, 1usize..5), 0..6)) {
        let spans = layout(n, &segments);
        let tags = spans_to_tags(n, &spans);
        prop_assert_eq!(tags_to_spans(&tags).unwrap(), spans.clone());
        prop_assert_eq!(decode_spans(&tags).unwrap(), spans);
    }

    #[test]
    fn label_follows_pair(s in sentence_strategy()) {
        prop_assert_eq!(s.sent_label, Some(s.term_span().is_some() && s.def_span().is_some()));
        let tagset = TagSet::new(TagSchema::Qualifier);
        let ids = tagset.encode(s.gold_tags.as_ref().unwrap()).unwrap();
        prop_assert_eq!(&tagset.decode(&ids), s.gold_tags.as_ref().unwrap());
    }
}

const GOOD: &str = "# label: 1\n1\tA\tDT\t2\tB-Term\n2\tgraph\tNN\t0\tI-Term\n3\tis\tVBZ\t2\tO\n4\ta\tDT\t5\tB-Definition\n5\tset\tNN\t3\tI-Definition\n";

fn parse_err(text: &str) -> CorpusError {
    parse_corpus(text).unwrap_err()
}

#[test]
fn parses_example_block() {
    let c = parse_corpus(GOOD).unwrap();
    assert_eq!(c.len(), 1);
    let s = &c[0];
    assert_eq!(s.heads, vec![Some(1), None, Some(1), Some(4), Some(2)]);
    assert_eq!(s.pair(), Some((Span::new(0, 1), Span::new(3, 4))));
    assert_eq!(s.sent_label, Some(true));
}

#[test]
fn malformed_inputs_are_rejected() {
    // Wrong column count.
    assert!(matches!(parse_err("# label: 0\n1\tA\tDT\t0\n"), CorpusError::Parse { line: 2, .. }));
    // Two roots.
    assert!(matches!(
        parse_err("# label: 0\n1\tA\tDT\t0\tO\n2\tB\tNN\t0\tO\n"),
        CorpusError::Parse { .. } | CorpusError::NotATree(_)
    ));
    // Cycle.
    assert!(parse_corpus("# label: 0\n1\tA\tDT\t2\tO\n2\tB\tNN\t1\tO\n3\tC\tNN\t0\tO\n").is_err());
    // Head out of range.
    assert!(parse_corpus("# label: 0\n1\tA\tDT\t7\tO\n").is_err());
    // Orphan inside tag.
    assert!(parse_corpus("# label: 0\n1\tA\tDT\t0\tI-Term\n").is_err());
    // Label contradicts spans.
    assert!(parse_corpus(&GOOD.replace("label: 1", "label: 0")).is_err());
    // Unknown tag.
    assert!(parse_corpus(&GOOD.replace("B-Term", "B-Thing")).is_err());
}

#[test]
fn unlabeled_input_parses() {
    let text = "# label: _\n1\tDogs\tNNS\t2\t_\n2\tbark\tVBP\t0\t_\n";
    let c = parse_corpus(text).unwrap();
    assert_eq!(c[0].gold_tags, None);
    assert_eq!(c[0].sent_label, None);
}
