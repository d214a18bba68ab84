//! Semantic-consistency objectives over BiLSTM vectors.
//!
//! * direct local: `-h_T · h_D`
//! * indirect local: a discriminator scores `[h_i ; h_D]`; term tokens are
//!   positives and tokens outside both spans are negatives
//! * global: the latent label predicted from the term/definition vector is
//!   the target for the sentence vector under the same latent head

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::corpus::Span;
use crate::params::{Affine, ConsistencyHeads};

/// Columnwise max over rows `start..=end` of `h`.
pub fn span_pool(g: &mut Graph<'_>, h: Var, span: Span) -> Result<Var, AutodiffError> {
    let n = g.value(h).rows();
    if span.start > span.end {
        return Err(AutodiffError::EmptyInput("span_pool"));
    }
    if span.end >= n {
        return Err(AutodiffError::IndexOutOfRange {
            op: "span_pool",
            index: span.end,
            bound: n,
        });
    }
    let rows: Vec<usize> = span.indices().collect();
    let picked = g.row_select(h, &rows)?;
    g.max_pool_rows(picked)
}

/// Max-pool over an arbitrary set of rows.
pub fn rows_pool(g: &mut Graph<'_>, h: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
    let picked = g.row_select(h, rows)?;
    g.max_pool_rows(picked)
}

pub fn direct_local_loss(g: &mut Graph<'_>, h_t: Var, h_d: Var) -> Result<Var, AutodiffError> {
    let sim = g.dot(h_t, h_d)?;
    g.negate(sim)
}

/// Discriminator logits for every row of `h` paired with `h_d`; `N x 1`.
///
/// The first layer's weight is split by rows so `[h_i ; h_D] W` becomes
/// `h_i W_top + h_D W_bottom` without materializing the concatenation.
pub fn discriminator_logits(
    g: &mut Graph<'_>,
    h: Var,
    h_d: Var,
    heads: &ConsistencyHeads,
) -> Result<Var, AutodiffError> {
    let width = g.value(h).cols();
    let di = &heads.discriminator;
    let w1 = g.param(di.hidden.w);
    if g.value(w1).rows() != 2 * width || g.value(h_d).cols() != width {
        return Err(AutodiffError::ShapeMismatch {
            op: "discriminator",
            left: g.value(h).shape(),
            right: g.value(w1).shape(),
        });
    }
    let top: Vec<usize> = (0..width).collect();
    let bottom: Vec<usize> = (width..2 * width).collect();
    let w_top = g.row_select(w1, &top)?;
    let w_bottom = g.row_select(w1, &bottom)?;
    let tokens = g.matmul(h, w_top)?;
    let def = g.matmul(h_d, w_bottom)?;
    let b1 = g.param(di.hidden.b);
    let def = g.add(def, b1)?;
    let pre = g.add(tokens, def)?;
    let hidden = g.relu(pre)?;
    di.output.apply(g, hidden)
}

/// Similarity score `ŝ = DI(h_i, h_D)` in `(0, 1)`.
pub fn discriminator_score(
    g: &mut Graph<'_>,
    h_i: Var,
    h_d: Var,
    heads: &ConsistencyHeads,
) -> Result<Var, AutodiffError> {
    let logit = discriminator_logits(g, h_i, h_d, heads)?;
    g.sigmoid(logit)
}

/// `-[Σ_{i∈term} log ŝ_i + Σ_{i∉I} log(1 - ŝ_i)]` with `I` the union of
/// both spans. Definition tokens take no part.
pub fn indirect_local_loss(
    g: &mut Graph<'_>,
    h: Var,
    h_d: Var,
    term: Span,
    def: Span,
    heads: &ConsistencyHeads,
) -> Result<Var, AutodiffError> {
    let n = g.value(h).rows();
    let logits = discriminator_logits(g, h, h_d, heads)?;
    let positives: Vec<(usize, usize)> = term.indices().map(|i| (i, 0)).collect();
    let negatives: Vec<(usize, usize)> = (0..n)
        .filter(|&i| !term.contains(i) && !def.contains(i))
        .map(|i| (i, 0))
        .collect();

    let pos = g.gather(logits, &positives)?;
    let pos = g.log_sigmoid(pos)?;
    let mut total = g.sum(pos)?;
    if !negatives.is_empty() {
        // log(1 - σ(z)) = log σ(-z)
        let neg = g.gather(logits, &negatives)?;
        let neg = g.negate(neg)?;
        let neg = g.log_sigmoid(neg)?;
        let neg = g.sum(neg)?;
        total = g.add(total, neg)?;
    }
    g.negate(total)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Latent label predicted from a term/definition vector value. Evaluated
/// outside the graph, so it acts as a constant target.
pub fn latent_target(store: &crate::autodiff::ParamStore, latent: &Affine, h_td: &Tensor) -> usize {
    argmax(latent.eval(store, h_td).data())
}

/// `-log P_S(l_TD)` with `l_TD = argmax P_TD`, the target carrying no
/// gradient.
pub fn global_consistency_loss(
    g: &mut Graph<'_>,
    h_s: Var,
    h_td: Var,
    heads: &ConsistencyHeads,
) -> Result<Var, AutodiffError> {
    let target = latent_target(g.params(), &heads.latent, g.value(h_td));
    let logits = heads.latent.apply(g, h_s)?;
    let logp = g.log_softmax_rows(logits)?;
    let picked = g.gather(logp, &[(0, target)])?;
    let picked = g.sum(picked)?;
    g.negate(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use crate::params::FeedForward;

    fn heads(store: &mut ParamStore, width: usize, zero: bool) -> ConsistencyHeads {
        let fill = |r: usize, c: usize| {
            if zero {
                Tensor::zeros(r, c)
            } else {
                Tensor::from_vec(r, c, (0..r * c).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.3).collect()).unwrap()
            }
        };
        ConsistencyHeads {
            discriminator: FeedForward {
                hidden: Affine { w: store.add("d.h.w", fill(2 * width, 3)), b: store.add("d.h.b", Tensor::zeros(1, 3)) },
                output: Affine { w: store.add("d.o.w", fill(3, 1)), b: store.add("d.o.b", Tensor::zeros(1, 1)) },
            },
            latent: Affine { w: store.add("l.w", fill(width, 3)), b: store.add("l.b", Tensor::zeros(1, 3)) },
        }
    }

    #[test]
    fn pooling_spans() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 2.0], [9.0, 9.0]]));
        let one = span_pool(&mut g, h, Span::new(1, 1)).unwrap();
        assert_eq!(g.value(one).data(), &[0.0, 2.0]);
        let two = span_pool(&mut g, h, Span::new(0, 1)).unwrap();
        assert_eq!(g.value(two).data(), &[1.0, 2.0]);
        assert!(span_pool(&mut g, h, Span { start: 1, end: 3 }).is_err());
        assert!(span_pool(&mut g, h, Span { start: 2, end: 1 }).is_err());
    }

    #[test]
    fn direct_loss() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Tensor::row_vector(&[1.0, 2.0]));
        let l = direct_local_loss(&mut g, a, a).unwrap();
        assert_eq!(g.value(l).item(), -5.0);
        let b = g.constant(Tensor::row_vector(&[-2.0, 1.0]));
        let l = direct_local_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn zero_discriminator_is_half() {
        let mut store = ParamStore::new();
        let hd = heads(&mut store, 2, true);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::from_rows(&[[3.0, -1.0]]));
        let d = g.constant(Tensor::row_vector(&[0.2, 0.4]));
        let s = discriminator_score(&mut g, h, d, &hd).unwrap();
        assert_eq!(g.value(s).item(), 0.5);
    }

    #[test]
    fn indirect_loss_uniform() {
        let mut store = ParamStore::new();
        let hd = heads(&mut store, 2, true);
        let mut g = Graph::new(&store);
        // term = 0, definition = 1, outside = 2
        let h = g.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]));
        let d = span_pool(&mut g, h, Span::new(1, 1)).unwrap();
        let l = indirect_local_loss(&mut g, h, d, Span::new(0, 0), Span::new(1, 1), &hd).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn definition_tokens_do_not_matter() {
        let mut store = ParamStore::new();
        let hd = heads(&mut store, 2, false);
        let loss = |def_row: [f64; 2]| {
            let mut g = Graph::new(&store);
            let h = g.constant(Tensor::from_rows(&[[1.0, 0.5], def_row, [0.3, -1.0]]));
            let d = g.constant(Tensor::row_vector(&[0.4, 0.1]));
            let l = indirect_local_loss(&mut g, h, d, Span::new(0, 0), Span::new(1, 1), &hd).unwrap();
            g.value(l).item()
        };
        assert_eq!(loss([0.0, 0.0]), loss([5.0, -3.0]));
    }

    #[test]
    fn global_uniform_is_log3() {
        let mut store = ParamStore::new();
        let hd = heads(&mut store, 2, true);
        let mut g = Graph::new(&store);
        let s = g.constant(Tensor::row_vector(&[0.5, 0.5]));
        let td = g.constant(Tensor::row_vector(&[0.1, 0.9]));
        let l = global_consistency_loss(&mut g, s, td, &hd).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn global_same_vector_is_max_prob() {
        let mut store = ParamStore::new();
        let hd = heads(&mut store, 2, false);
        let v = Tensor::row_vector(&[0.7, -0.4]);
        let probs = {
            let z = hd.latent.eval(&store, &v);
            let lse = crate::autodiff::log_sum_exp(z.data());
            z.data().iter().map(|x| (x - lse).exp()).collect::<Vec<_>>()
        };
        let mut g = Graph::new(&store);
        let s = g.constant(v.clone());
        let td = g.constant(v);
        let l = global_consistency_loss(&mut g, s, td, &hd).unwrap();
        let max_p = probs.iter().copied().fold(0.0, f64::max);
        assert!((g.value(l).item() + max_p.ln()).abs() < 1e-12);
        assert!(g.value(l).item() <= 3f64.ln());
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
