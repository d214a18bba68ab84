//! Linear-chain CRF over BIO tags.
//!
//! Emissions `S` are `N x K`; transitions `T` are `(K + 1) x K` with the last
//! row scoring the move out of the synthetic START state. There is no STOP
//! state. A label sequence scores
//! `Σ_j S[j, l_j] + T[l_{j-1}, l_j]` with `l_{-1} = START`.

use crate::autodiff::{log_sum_exp, AutodiffError, CustomOp, Graph, Tensor, Var};
use crate::params::CrfParams;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CrfError {
    #[error("label {label} at position {position} is not a tag index (have {num_tags} tags)")]
    InvalidLabel {
        position: usize,
        label: usize,
        num_tags: usize,
    },
    #[error("{labels} labels for {positions} positions")]
    LengthMismatch { labels: usize, positions: usize },
    #[error("transition matrix is {rows}x{cols}, emissions have {tags} tags")]
    BadTransitions { rows: usize, cols: usize, tags: usize },
    #[error("empty sentence")]
    Empty,
    #[error(transparent)]
    Graph(#[from] AutodiffError),
}

fn check_shapes(s: &Tensor, t: &Tensor) -> Result<(), CrfError> {
    if s.rows() == 0 {
        return Err(CrfError::Empty);
    }
    let k = s.cols();
    if t.cols() != k || t.rows() != k + 1 {
        return Err(CrfError::BadTransitions {
            rows: t.rows(),
            cols: t.cols(),
            tags: k,
        });
    }
    Ok(())
}

fn check_labels(s: &Tensor, labels: &[usize]) -> Result<(), CrfError> {
    if labels.len() != s.rows() {
        return Err(CrfError::LengthMismatch {
            labels: labels.len(),
            positions: s.rows(),
        });
    }
    if let Some((position, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= s.cols()) {
        return Err(CrfError::InvalidLabel {
            position,
            label,
            num_tags: s.cols(),
        });
    }
    Ok(())
}

/// Row `i` is `W_S h'_i + b`.
pub fn emission_scores(g: &mut Graph<'_>, h_prime: Var, crf: &CrfParams) -> Result<Var, CrfError> {
    Ok(crf.emission.apply(g, h_prime)?)
}

pub fn sequence_score(s: &Tensor, t: &Tensor, labels: &[usize]) -> Result<f64, CrfError> {
    check_shapes(s, t)?;
    check_labels(s, labels)?;
    let start = s.cols();
    let mut prev = start;
    let mut total = 0.0;
    for (j, &l) in labels.iter().enumerate() {
        total += s.get(j, l) + t.get(prev, l);
        prev = l;
    }
    Ok(total)
}

/// Forward log-probabilities `alpha[j][c]`: log-sum of all prefixes ending
/// in tag `c` at position `j`.
fn forward_table(s: &Tensor, t: &Tensor) -> Vec<Vec<f64>> {
    let (n, k) = s.shape();
    let mut alpha = vec![vec![0.0; k]; n];
    for c in 0..k {
        alpha[0][c] = t.get(k, c) + s.get(0, c);
    }
    let mut buf = vec![0.0; k];
    for j in 1..n {
        for c in 0..k {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = alpha[j - 1][p] + t.get(p, c);
            }
            alpha[j][c] = log_sum_exp(&buf) + s.get(j, c);
        }
    }
    alpha
}

/// Backward log-probabilities `beta[j][c]`: log-sum of all suffixes after
/// position `j` given tag `c` there.
fn backward_table(s: &Tensor, t: &Tensor) -> Vec<Vec<f64>> {
    let (n, k) = s.shape();
    let mut beta = vec![vec![0.0; k]; n];
    let mut buf = vec![0.0; k];
    for j in (0..n.saturating_sub(1)).rev() {
        for p in 0..k {
            for (c, b) in buf.iter_mut().enumerate() {
                *b = t.get(p, c) + s.get(j + 1, c) + beta[j + 1][c];
            }
            beta[j][p] = log_sum_exp(&buf);
        }
    }
    beta
}

/// Log of the sum over all `K^N` label sequences of `exp(score)`.
pub fn log_partition(s: &Tensor, t: &Tensor) -> Result<f64, CrfError> {
    check_shapes(s, t)?;
    let alpha = forward_table(s, t);
    Ok(log_sum_exp(alpha.last().expect("non-empty sentence")))
}

/// Per-position tag marginals and expected transition counts, i.e. the
/// gradients of the log-partition with respect to `S` and `T`.
pub fn marginals(s: &Tensor, t: &Tensor) -> Result<(Tensor, Tensor), CrfError> {
    check_shapes(s, t)?;
    let (n, k) = s.shape();
    let alpha = forward_table(s, t);
    let beta = backward_table(s, t);
    let log_z = log_sum_exp(&alpha[n - 1]);

    let mut unary = Tensor::zeros(n, k);
    for j in 0..n {
        for c in 0..k {
            unary.set(j, c, (alpha[j][c] + beta[j][c] - log_z).exp());
        }
    }
    let mut pair = Tensor::zeros(k + 1, k);
    for c in 0..k {
        pair.set(k, c, unary.get(0, c));
    }
    for j in 1..n {
        for p in 0..k {
            for c in 0..k {
                let lp = alpha[j - 1][p] + t.get(p, c) + s.get(j, c) + beta[j][c] - log_z;
                pair.set(p, c, pair.get(p, c) + lp.exp());
            }
        }
    }
    Ok((unary, pair))
}

/// Graph op computing the log-partition of `(S, T)`.
struct LogPartition;

impl CustomOp for LogPartition {
    fn name(&self) -> &'static str {
        "crf_log_partition"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let (s, t) = (inputs[0], inputs[1]);
        let z = log_partition(s, t).map_err(|_| AutodiffError::ShapeMismatch {
            op: "crf_log_partition",
            left: s.shape(),
            right: t.shape(),
        })?;
        Ok(Tensor::scalar(z))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let (unary, pair) = marginals(inputs[0], inputs[1]).expect("shapes checked in forward");
        let g = grad_out.item();
        vec![unary.scale(g), pair.scale(g)]
    }
}

pub fn log_partition_var(g: &mut Graph<'_>, s: Var, t: Var) -> Result<Var, CrfError> {
    check_shapes(g.value(s), g.value(t))?;
    Ok(g.custom(Box::new(LogPartition), &[s, t])?)
}

/// Differentiable sequence score of fixed labels.
pub fn sequence_score_var(g: &mut Graph<'_>, s: Var, t: Var, labels: &[usize]) -> Result<Var, CrfError> {
    check_shapes(g.value(s), g.value(t))?;
    check_labels(g.value(s), labels)?;
    let start = g.value(s).cols();
    let emit: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    let trans: Vec<(usize, usize)> = std::iter::once(start)
        .chain(labels.iter().copied())
        .zip(labels.iter().copied())
        .collect();
    let e = g.gather(s, &emit)?;
    let e = g.sum(e)?;
    let tr = g.gather(t, &trans)?;
    let tr = g.sum(tr)?;
    Ok(g.add(e, tr)?)
}

/// `log Z - score(gold)`, the negative log-likelihood of the gold tags.
pub fn crf_nll(g: &mut Graph<'_>, s: Var, t: Var, gold: &[usize]) -> Result<Var, CrfError> {
    let log_z = log_partition_var(g, s, t)?;
    let score = sequence_score_var(g, s, t, gold)?;
    Ok(g.sub(log_z, score)?)
}

/// Highest-scoring label sequence and its score. Among equal scores the
/// lowest tag index wins, both for the final tag and each back-pointer.
pub fn viterbi_decode(s: &Tensor, t: &Tensor) -> Result<(Vec<usize>, f64), CrfError> {
    check_shapes(s, t)?;
    let (n, k) = s.shape();
    let mut best = vec![0.0; k];
    for (c, b) in best.iter_mut().enumerate() {
        *b = t.get(k, c) + s.get(0, c);
    }
    let mut back = vec![vec![0usize; k]; n];
    for j in 1..n {
        let mut next = vec![0.0; k];
        for c in 0..k {
            let mut arg = 0;
            let mut val = best[0] + t.get(0, c);
            for (p, &bp) in best.iter().enumerate().skip(1) {
                let v = bp + t.get(p, c);
                if v > val {
                    val = v;
                    arg = p;
                }
            }
            next[c] = val + s.get(j, c);
            back[j][c] = arg;
        }
        best = next;
    }
    let mut last = 0;
    for c in 1..k {
        if best[c] > best[last] {
            last = c;
        }
    }
    let score = best[last];
    let mut labels = vec![0; n];
    labels[n - 1] = last;
    for j in (1..n).rev() {
        labels[j - 1] = back[j][labels[j]];
    }
    Ok((labels, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    fn zeros(n: usize, k: usize) -> (Tensor, Tensor) {
        (Tensor::zeros(n, k), Tensor::zeros(k + 1, k))
    }

    #[test]
    fn hand_summed_score() {
        let s = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let t = Tensor::from_rows(&[[0.5, -0.5], [0.1, 0.2], [0.0, 0.0]]);
        let v = sequence_score(&s, &t, &[1, 0]).unwrap();
        assert!((v - 5.1).abs() < 1e-12);
    }

    #[test]
    fn zero_scores() {
        let (s, t) = zeros(2, 2);
        assert_eq!(sequence_score(&s, &t, &[0, 1]).unwrap(), 0.0);
        assert!((log_partition(&s, &t).unwrap() - 4f64.ln()).abs() < 1e-12);
        let (a, b) = (0.3, -1.1);
        let s1 = Tensor::row_vector(&[a, b]);
        let expected = (a.exp() + b.exp()).ln();
        assert!((log_partition(&s1, &Tensor::zeros(3, 2)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn nll_of_uniform() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let (s, t) = zeros(2, 2);
        let s = g.leaf(s);
        let t = g.leaf(t);
        let l = crf_nll(&mut g, s, t, &[1, 1]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_labels() {
        let (s, t) = zeros(2, 3);
        assert!(matches!(
            sequence_score(&s, &t, &[0, 3]),
            Err(CrfError::InvalidLabel { position: 1, label: 3, .. })
        ));
        assert!(sequence_score(&s, &t, &[0]).is_err());
        assert!(log_partition(&s, &Tensor::zeros(3, 3)).is_err());
    }

    #[test]
    fn viterbi_diagonal() {
        let s = Tensor::from_rows(&[[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]]);
        let t = Tensor::zeros(4, 3);
        let (labels, score) = viterbi_decode(&s, &t).unwrap();
        assert_eq!(labels, vec![0, 1, 2]);
        assert_eq!(score, 15.0);
    }

    #[test]
    fn viterbi_ties_pick_lowest() {
        let (s, t) = zeros(3, 4);
        assert_eq!(viterbi_decode(&s, &t).unwrap().0, vec![0, 0, 0]);
    }

    #[test]
    fn marginals_sum_to_one() {
        let s = Tensor::from_rows(&[[0.2, -1.0, 0.4], [1.5, 0.0, -0.3]]);
        let t = Tensor::from_rows(&[[0.1, 0.2, 0.3], [0.0, -0.5, 0.7], [0.3, 0.3, -0.1], [0.9, 0.0, 0.1]]);
        let (unary, pair) = marginals(&s, &t).unwrap();
        for j in 0..2 {
            let total: f64 = unary.row(j).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let start_row: f64 = pair.row(3).iter().sum();
        assert!((start_row - 1.0).abs() < 1e-12);
        let inner: f64 = (0..3).map(|p| pair.row(p).iter().sum::<f64>()).sum();
        assert!((inner - 1.0).abs() < 1e-12);
    }
}
