//! Sentence-level definitional classifier over max-pooled GCN vectors.

use crate::autodiff::{AutodiffError, Graph, Var};
use crate::params::FeedForward;

/// Index of the definitional class in the two-way distribution.
pub const DEFINITIONAL: usize = 1;

#[derive(Clone, Copy, Debug)]
pub struct ClassifierOutput {
    pub logits: Var,
    pub probs: Var,
}

/// Columnwise max over all token rows.
pub fn sentence_pool(g: &mut Graph<'_>, h_hat: Var) -> Result<Var, AutodiffError> {
    g.max_pool_rows(h_hat)
}

pub fn classify(g: &mut Graph<'_>, pooled: Var, head: &FeedForward) -> Result<ClassifierOutput, AutodiffError> {
    let logits = head.apply(g, pooled)?;
    let probs = g.softmax_rows(logits)?;
    Ok(ClassifierOutput { logits, probs })
}

/// Argmax of a `[p_non, p_def]` distribution; ties go to non-definitional.
pub fn predict_label(probs: &[f64]) -> bool {
    probs[DEFINITIONAL] > probs[1 - DEFINITIONAL]
}

/// `-log P(gold)`, computed from the logits for stability.
pub fn classification_loss(g: &mut Graph<'_>, out: &ClassifierOutput, gold: bool) -> Result<Var, AutodiffError> {
    let logp = g.log_softmax_rows(out.logits)?;
    let picked = g.gather(logp, &[(0, usize::from(gold))])?;
    let picked = g.sum(picked)?;
    g.negate(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Tensor};
    use crate::params::Affine;

    fn head(store: &mut ParamStore, w2: Tensor, b2: Tensor) -> FeedForward {
        FeedForward {
            hidden: Affine {
                w: store.add("h.w", Tensor::identity(2)),
                b: store.add("h.b", Tensor::zeros(1, 2)),
            },
            output: Affine {
                w: store.add("o.w", w2),
                b: store.add("o.b", b2),
            },
        }
    }

    #[test]
    fn pooling() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::from_rows(&[[1.0, 5.0], [4.0, 2.0]]));
        let p = sentence_pool(&mut g, x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0, 5.0]);
        let y = g.constant(Tensor::from_rows(&[[4.0, 2.0], [1.0, 5.0]]));
        let q = sentence_pool(&mut g, y).unwrap();
        assert_eq!(g.value(q), g.value(p));
    }

    #[test]
    fn zero_weights_uniform_and_log2_loss() {
        let mut store = ParamStore::new();
        let ff = head(&mut store, Tensor::zeros(2, 2), Tensor::zeros(1, 2));
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row_vector(&[0.7, -0.2]));
        let out = classify(&mut g, x, &ff).unwrap();
        assert_eq!(g.value(out.probs).data(), &[0.5, 0.5]);
        assert!(!predict_label(g.value(out.probs).data()));
        let l = classification_loss(&mut g, &out, true).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn quarter_probability() {
        // logits (ln 3, 0) give P(def) = 1/4
        let mut store = ParamStore::new();
        let ff = head(&mut store, Tensor::zeros(2, 2), Tensor::row_vector(&[3f64.ln(), 0.0]));
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row_vector(&[0.0, 0.0]));
        let out = classify(&mut g, x, &ff).unwrap();
        let l = classification_loss(&mut g, &out, true).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let total: f64 = g.value(out.probs).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
