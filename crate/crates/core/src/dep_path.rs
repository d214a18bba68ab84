//! Term–definition dependency path: gold on-path labels and the auxiliary
//! per-token path-membership objective.

use crate::autodiff::{AutodiffError, Graph, Var};
use crate::corpus::{Sentence, Span};
use crate::params::FeedForward;

/// `d[i] = 1` when token `i` lies on the path between the term and the
/// definition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathLabels {
    pub d: Vec<u8>,
}

impl PathLabels {
    pub fn zeros(n: usize) -> Self {
        PathLabels { d: vec![0; n] }
    }

    pub fn on_path(&self) -> impl Iterator<Item = usize> + '_ {
        self.d.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i)
    }
}

/// The token of `span` whose head lies outside it. When several do, the
/// leftmost of them.
pub fn span_head(heads: &[Option<usize>], span: Span) -> usize {
    span.indices()
        .find(|&i| heads[i].is_none_or(|h| !span.contains(h)))
        .unwrap_or(span.start)
}

fn depth(heads: &[Option<usize>], mut i: usize) -> usize {
    let mut d = 0;
    while let Some(h) = heads[i] {
        i = h;
        d += 1;
    }
    d
}

/// Nodes on the tree path from `u` to `v`, both included, through their
/// lowest common ancestor.
pub fn tree_path(heads: &[Option<usize>], u: usize, v: usize) -> Vec<usize> {
    let (mut a, mut b) = (u, v);
    let (mut da, mut db) = (depth(heads, a), depth(heads, b));
    let mut up_a = vec![a];
    let mut up_b = vec![b];
    while da > db {
        a = heads[a].expect("non-root above depth 0");
        da -= 1;
        up_a.push(a);
    }
    while db > da {
        b = heads[b].expect("non-root above depth 0");
        db -= 1;
        up_b.push(b);
    }
    while a != b {
        a = heads[a].expect("distinct nodes below the root");
        b = heads[b].expect("distinct nodes below the root");
        up_a.push(a);
        up_b.push(b);
    }
    up_b.pop();
    up_a.extend(up_b.into_iter().rev());
    up_a
}

/// Path labels for an explicit term/definition pair.
pub fn path_labels(heads: &[Option<usize>], pair: Option<(Span, Span)>) -> PathLabels {
    let mut labels = PathLabels::zeros(heads.len());
    if let Some((term, def)) = pair {
        for i in tree_path(heads, span_head(heads, term), span_head(heads, def)) {
            labels.d[i] = 1;
        }
    }
    labels
}

/// Path labels from the sentence's first term/definition pair; all zero when
/// either is missing.
pub fn shortest_dep_path(sentence: &Sentence) -> PathLabels {
    path_labels(&sentence.heads, sentence.pair())
}

/// Per-token two-way logits.
pub fn path_logits(g: &mut Graph<'_>, h_hat: Var, head: &FeedForward) -> Result<Var, AutodiffError> {
    head.apply(g, h_hat)
}

/// `-Σ_i log P(d_i)` over all tokens.
pub fn path_loss(g: &mut Graph<'_>, h_hat: Var, labels: &PathLabels, head: &FeedForward) -> Result<Var, AutodiffError> {
    let logits = path_logits(g, h_hat, head)?;
    let logp = g.log_softmax_rows(logits)?;
    let cells: Vec<(usize, usize)> = labels.d.iter().enumerate().map(|(i, &d)| (i, usize::from(d))).collect();
    let picked = g.gather(logp, &cells)?;
    let total = g.sum(picked)?;
    g.negate(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Tensor};
    use crate::params::Affine;

    #[test]
    fn copula_path() {
        // A is B: "is" is the root
        let heads = [Some(1), None, Some(1)];
        let l = path_labels(&heads, Some((Span::new(0, 0), Span::new(2, 2))));
        assert_eq!(l.d, vec![1, 1, 1]);
    }

    #[test]
    fn no_spans_all_zero() {
        let heads = [Some(1), None, Some(1)];
        assert_eq!(path_labels(&heads, None).d, vec![0, 0, 0]);
    }

    #[test]
    fn adjacent_heads() {
        // term head 0 is the parent of definition head 2
        let heads = [Some(3), Some(2), Some(0), None];
        let l = path_labels(&heads, Some((Span::new(0, 0), Span::new(1, 2))));
        assert_eq!(span_head(&heads, Span::new(1, 2)), 2);
        assert_eq!(l.d, vec![1, 0, 1, 0]);
    }

    #[test]
    fn multiword_span_head() {
        // tokens 1..=3, head of the span is 2 (its head 4 is outside)
        let heads = [Some(4), Some(2), Some(4), Some(2), None];
        assert_eq!(span_head(&heads, Span::new(1, 3)), 2);
    }

    #[test]
    fn path_passes_through_lca() {
        //      0
        //    1   2
        //   3     4
        let heads = [None, Some(0), Some(0), Some(1), Some(2)];
        assert_eq!(tree_path(&heads, 3, 4), vec![3, 1, 0, 2, 4]);
        assert_eq!(tree_path(&heads, 4, 4), vec![4]);
        assert_eq!(tree_path(&heads, 0, 3), vec![0, 1, 3]);
    }

    fn ff(store: &mut ParamStore, b2: [f64; 2]) -> FeedForward {
        FeedForward {
            hidden: Affine { w: store.add("h.w", Tensor::zeros(2, 2)), b: store.add("h.b", Tensor::zeros(1, 2)) },
            output: Affine { w: store.add("o.w", Tensor::zeros(2, 2)), b: store.add("o.b", Tensor::row_vector(&b2)) },
        }
    }

    #[test]
    fn zero_head_loss_is_n_log2() {
        let mut store = ParamStore::new();
        let head = ff(&mut store, [0.0, 0.0]);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]));
        let l = path_loss(&mut g, h, &PathLabels { d: vec![1, 0, 1] }, &head).unwrap();
        assert!((g.value(l).item() - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_summed_loss() {
        // bias (ln 3, 0): P(d=1) = 1/4, P(d=0) = 3/4
        let mut store = ParamStore::new();
        let head = ff(&mut store, [3f64.ln(), 0.0]);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::zeros(2, 2));
        let l = path_loss(&mut g, h, &PathLabels { d: vec![1, 0] }, &head).unwrap();
        let expected = 4f64.ln() - (0.75f64).ln();
        assert!((g.value(l).item() - expected).abs() < 1e-12);
    }
}
