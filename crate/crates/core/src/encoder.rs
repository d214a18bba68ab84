//! Sentence encoding: word+POS embeddings, BiLSTM, GCN over the dependency
//! tree, and the `[h_i ; ĥ_i]` concatenation used by the tagger.

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::params::{Affine, LstmParams, ModelParams};

/// Graph nodes for each encoder stage. All have one row per token.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutputs {
    pub e: Var,
    pub h: Var,
    pub h_hat: Var,
    pub h_prime: Var,
}

/// Row `i` is `[word_emb(words[i]) ; pos_emb(pos[i])]`.
pub fn embed(
    g: &mut Graph<'_>,
    params: &ModelParams,
    words: &[usize],
    pos: &[usize],
) -> Result<Var, AutodiffError> {
    let wt = g.param(params.word_emb);
    let pt = g.param(params.pos_emb);
    let w = g.row_select(wt, words)?;
    let p = g.row_select(pt, pos)?;
    g.concat_cols(&[w, p])
}

/// Runs one LSTM direction over `xw = X W_x + b` (precomputed for every
/// token) visiting rows in `order`. Returns hidden states in sentence order.
fn lstm_direction(
    g: &mut Graph<'_>,
    xw: Var,
    lstm: &LstmParams,
    order: impl Iterator<Item = usize>,
    n: usize,
) -> Result<Vec<Var>, AutodiffError> {
    let d = lstm.hidden(g.params());
    let w_h = g.param(lstm.w_h);
    let mut out: Vec<Option<Var>> = vec![None; n];
    let mut state: Option<(Var, Var)> = None;
    for t in order {
        let x_t = g.row_select(xw, &[t])?;
        let pre = match state {
            Some((h_prev, _)) => {
                let rec = g.matmul(h_prev, w_h)?;
                g.add(x_t, rec)?
            }
            None => x_t,
        };
        let i_pre = g.slice_cols(pre, 0, d)?;
        let f_pre = g.slice_cols(pre, d, d)?;
        let c_pre = g.slice_cols(pre, 2 * d, d)?;
        let o_pre = g.slice_cols(pre, 3 * d, d)?;
        let i = g.sigmoid(i_pre)?;
        let f = g.sigmoid(f_pre)?;
        let cand = g.tanh(c_pre)?;
        let o = g.sigmoid(o_pre)?;
        let write = g.mul(i, cand)?;
        let cell = match state {
            Some((_, c_prev)) => {
                let keep = g.mul(f, c_prev)?;
                g.add(keep, write)?
            }
            None => write,
        };
        let squashed = g.tanh(cell)?;
        let h = g.mul(o, squashed)?;
        out[t] = Some(h);
        state = Some((h, cell));
    }
    Ok(out.into_iter().map(|h| h.expect("every position visited")).collect())
}

/// `h_i = [fwd_i ; bwd_i]`, forward left to right and backward right to left.
pub fn bilstm(g: &mut Graph<'_>, params: &ModelParams, e: Var) -> Result<Var, AutodiffError> {
    let n = g.value(e).rows();
    let mut halves = Vec::with_capacity(2);
    for (lstm, reverse) in [(&params.lstm_fwd, false), (&params.lstm_bwd, true)] {
        let w_x = g.param(lstm.w_x);
        let b = g.param(lstm.b);
        let xw = g.matmul(e, w_x)?;
        let xw = g.add(xw, b)?;
        let rows = if reverse {
            lstm_direction(g, xw, lstm, (0..n).rev(), n)?
        } else {
            lstm_direction(g, xw, lstm, 0..n, n)?
        };
        halves.push(g.concat_rows(&rows)?);
    }
    g.concat_cols(&halves)
}

/// Row-normalized `A + I` of the undirected dependency tree: entry `(i, j)`
/// is `1 / deg(i)` for `j` in `N(i) = {i} ∪ {head(i)} ∪ children(i)`.
pub fn normalized_adjacency(heads: &[Option<usize>]) -> Tensor {
    let n = heads.len();
    let mut adj = Tensor::identity(n);
    for (i, h) in heads.iter().enumerate() {
        if let Some(h) = *h {
            adj.set(i, h, 1.0);
            adj.set(h, i, 1.0);
        }
    }
    for i in 0..n {
        let deg: f64 = adj.row(i).iter().sum();
        adj.row_mut(i).iter_mut().for_each(|v| *v /= deg);
    }
    adj
}

/// `ĥ_i = ReLU(W (Σ_{j∈N(i)} h_j / deg(i)) + b)` for every token.
pub fn gcn_layer(g: &mut Graph<'_>, h_in: Var, adjacency: Var, layer: &Affine) -> Result<Var, AutodiffError> {
    let agg = g.matmul(adjacency, h_in)?;
    let lin = layer.apply(g, agg)?;
    g.relu(lin)
}

/// Full encoder. `dropout` is an optional `(mask_e, mask_h_prime)` pair of
/// constant masks (already scaled) applied during training.
pub fn encode(
    g: &mut Graph<'_>,
    params: &ModelParams,
    words: &[usize],
    pos: &[usize],
    heads: &[Option<usize>],
    dropout: Option<(&Tensor, &Tensor)>,
) -> Result<EncoderOutputs, AutodiffError> {
    let mut e = embed(g, params, words, pos)?;
    if let Some((mask, _)) = dropout {
        let m = g.constant(mask.clone());
        e = g.mul(e, m)?;
    }
    let h = bilstm(g, params, e)?;
    let adjacency = g.constant(normalized_adjacency(heads));
    let mut h_hat = h;
    for layer in &params.gcn {
        h_hat = gcn_layer(g, h_hat, adjacency, layer)?;
    }
    let mut h_prime = g.concat_cols(&[h, h_hat])?;
    if let Some((_, mask)) = dropout {
        let m = g.constant(mask.clone());
        h_prime = g.mul(h_prime, m)?;
    }
    Ok(EncoderOutputs { e, h, h_hat, h_prime })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use crate::params::{Hyperparams, ModelShape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(store: &mut ParamStore, dim: usize) -> Affine {
        Affine {
            w: store.add("w", Tensor::identity(dim)),
            b: store.add("b", Tensor::zeros(1, dim)),
        }
    }

    fn run_gcn(heads: &[Option<usize>], h: Tensor) -> Tensor {
        let mut store = ParamStore::new();
        let layer = identity_layer(&mut store, h.cols());
        let mut g = Graph::new(&store);
        let x = g.constant(h);
        let adj = g.constant(normalized_adjacency(heads));
        let out = gcn_layer(&mut g, x, adj, &layer).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn gcn_single_node() {
        let out = run_gcn(&[None], Tensor::row_vector(&[-1.0, 3.0]));
        assert_eq!(out.data(), &[0.0, 3.0]);
    }

    #[test]
    fn gcn_two_nodes() {
        let out = run_gcn(&[None, Some(0)], Tensor::from_rows(&[[2.0, 0.0], [0.0, 2.0]]));
        assert_eq!(out, Tensor::from_rows(&[[1.0, 1.0], [1.0, 1.0]]));
    }

    #[test]
    fn gcn_star_root_averages_four() {
        let h = Tensor::from_rows(&[[4.0], [1.0], [2.0], [5.0]]);
        let out = run_gcn(&[None, Some(0), Some(0), Some(0)], h);
        assert!((out.get(0, 0) - 3.0).abs() < 1e-15);
        // leaf: (own + root) / 2
        assert!((out.get(1, 0) - 2.5).abs() < 1e-15);
    }

    fn setup(h: &Hyperparams) -> ModelParams {
        let shape = ModelShape { num_words: 12, num_pos: 5, num_tags: 5 };
        ModelParams::init(h, shape, &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn default_widths() {
        let h = Hyperparams::default();
        let p = setup(&h);
        let mut g = Graph::new(&p.store);
        let out = encode(&mut g, &p, &[2, 3], &[1, 2], &[None, Some(0)], None).unwrap();
        assert_eq!(g.value(out.e).shape(), (2, 350));
        assert_eq!(g.value(out.h).shape(), (2, 200));
        assert_eq!(g.value(out.h_hat).shape(), (2, 200));
        assert_eq!(g.value(out.h_prime).shape(), (2, 400));
    }

    #[test]
    fn zero_lstm_gives_zero_outputs() {
        let h = Hyperparams::tiny();
        let mut p = setup(&h);
        for lstm in [p.lstm_fwd, p.lstm_bwd] {
            for id in [lstm.w_x, lstm.w_h, lstm.b] {
                p.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::new(&p.store);
        let out = encode(&mut g, &p, &[2, 3, 4], &[1, 2, 1], &[Some(1), None, Some(1)], None).unwrap();
        assert!(g.value(out.h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(out.h_hat).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_tokens_identical_rows() {
        let h = Hyperparams::tiny();
        let p = setup(&h);
        let mut g = Graph::new(&p.store);
        let e = embed(&mut g, &p, &[4, 4, crate::corpus::UNK], &[2, 2, 1]).unwrap();
        let v = g.value(e);
        assert_eq!(v.row(0), v.row(1));
        assert_eq!(&v.row(2)[..h.word_dim], p.store.get(p.word_emb).row(crate::corpus::UNK));
    }

    #[test]
    fn concatenation_is_exact() {
        let h = Hyperparams::tiny();
        let p = setup(&h);
        let mut g = Graph::new(&p.store);
        let out = encode(&mut g, &p, &[2, 3, 4], &[1, 2, 3], &[Some(1), None, Some(1)], None).unwrap();
        for i in 0..3 {
            let joined: Vec<f64> = g.value(out.h).row(i).iter().chain(g.value(out.h_hat).row(i)).copied().collect();
            assert_eq!(g.value(out.h_prime).row(i), joined.as_slice());
        }
    }
}
