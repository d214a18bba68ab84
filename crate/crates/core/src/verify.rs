//! Self-checks run by `defx verify`: finite-difference gradient checks per
//! loss term and independent oracles for the CRF, the GCN layer and the
//! dependency path.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, Graph, ParamStore, Tensor};
use crate::corpus::{make_synthetic_corpus, Span, TagSchema, TagSet, Vocab};
use crate::crf;
use crate::dep_path;
use crate::encoder;
use crate::model::{total_loss, Model, ModelError};
use crate::params::{Affine, Hyperparams};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const CRF_TOLERANCE: f64 = 1e-8;
pub const GCN_TOLERANCE: f64 = 1e-10;

/// Deliberate bugs, to confirm the oracles notice them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The CRF under test sees the tag-to-tag block of `T` transposed.
    TransposedTransitions,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub crf_instances: usize,
    pub gcn_trees: usize,
    pub path_trees: usize,
    /// Largest sentence for the tree oracles.
    pub max_len: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 1,
            fault: None,
            crf_instances: 100,
            gcn_trees: 100,
            path_trees: 200,
            max_len: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest observed error, where meaningful.
    pub max_error: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {}", self.seed)?;
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            match c.max_error {
                Some(e) => writeln!(f, "{status}  {:<28} max error {e:.3e}  {}", c.name, c.detail)?,
                None => writeln!(f, "{status}  {:<28} {}", c.name, c.detail)?,
            }
        }
        let failed = self.failures().count();
        if failed == 0 {
            write!(f, "all {} checks passed", self.checks.len())
        } else {
            write!(f, "{failed} of {} checks failed", self.checks.len())
        }
    }
}

/// Random dependency tree over `n` tokens: a random root, then each further
/// token (in random order) attached to one already placed.
pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![None; n];
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        heads[order[k]] = Some(parent);
    }
    heads
}

/// Two disjoint random spans in a sentence of `n >= 2` tokens, in random
/// order: one on each side of a random cut.
pub fn random_span_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Span, Span) {
    let cut = rng.gen_range(1..n);
    let mut span_in = |lo: usize, hi: usize| {
        let (x, y) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        Span::new(x.min(y), x.max(y))
    };
    let left = span_in(0, cut);
    let right = span_in(cut, n);
    if rng.gen::<bool>() {
        (left, right)
    } else {
        (right, left)
    }
}

// ---------------------------------------------------------------- gradients

/// Hyperparameters switching on a single loss term.
fn only(term: &str) -> Hyperparams {
    let mut h = Hyperparams {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        eta: 0.0,
        a: 0.0,
        b: 0.0,
        c: 0.0,
        ..Hyperparams::tiny()
    };
    match term {
        "labeling" => h.alpha = 1.0,
        "classification" => h.beta = 1.0,
        "path" => h.gamma = 1.0,
        "direct" => (h.eta, h.a) = (1.0, 1.0),
        "indirect" => (h.eta, h.b) = (1.0, 1.0),
        "global" => (h.eta, h.c) = (1.0, 1.0),
        _ => h = Hyperparams::tiny(),
    }
    h
}

/// Model at small sizes whose parameters sit at a generic point: the usual
/// initialization plus uniform noise in `[-1, 1)`. Zero biases put ReLU
/// inputs exactly on the kink, where a finite difference measures neither
/// one-sided derivative.
pub fn gradcheck_model(seed: u64) -> (Model, Vec<crate::model::Example>) {
    let corpus = make_synthetic_corpus(seed, 2);
    let vocab = Vocab::build(&corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(Hyperparams::tiny(), vocab, TagSet::new(TagSchema::Basic), &mut rng);
    let ids: Vec<_> = model.params.store.ids().collect();
    for id in ids {
        for v in model.params.store.get_mut(id).data_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
    }
    let examples = model.examples(&corpus).expect("synthetic corpus fits its vocabulary");
    (model, examples)
}

fn gradient_checks(seed: u64) -> Vec<CheckResult> {
    let (model, examples) = gradcheck_model(seed);
    let terms = ["labeling", "classification", "path", "direct", "indirect", "global", "total"];
    terms
        .iter()
        .map(|&term| {
            let hyper = only(term);
            let params = &model.params;
            let result = grad_check(
                |g: &mut Graph<'_>| -> Result<_, ModelError> {
                    let parts = examples
                        .iter()
                        .map(|ex| Ok(total_loss(g, params, &hyper, ex, None)?.total))
                        .collect::<Result<Vec<_>, ModelError>>()?;
                    Ok(g.add_all(&parts)?)
                },
                &params.store,
                1e-5,
            );
            match result {
                Ok(rep) => {
                    let worst = rep.worst_param().map(|p| p.name.clone()).unwrap_or_default();
                    CheckResult {
                        name: format!("grad {term}"),
                        passed: rep.max_rel_error < GRAD_TOLERANCE,
                        max_error: Some(rep.max_rel_error),
                        detail: format!("{} entries, worst in {worst}", rep.entries()),
                    }
                }
                Err(e) => CheckResult {
                    name: format!("grad {term}"),
                    passed: false,
                    max_error: None,
                    detail: e.to_string(),
                },
            }
        })
        .collect()
}

// --------------------------------------------------------------------- CRF

fn brute_force_score(s: &Tensor, t: &Tensor, labels: &[usize]) -> f64 {
    let start = t.rows() - 1;
    let mut prev = start;
    let mut total = 0.0;
    for (j, &l) in labels.iter().enumerate() {
        total += s.get(j, l) + t.get(prev, l);
        prev = l;
    }
    total
}

/// Every label sequence of length `n` over `k` tags, in lexicographic order.
fn all_sequences(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..k.pow(n as u32)).map(move |mut code| {
        let mut seq = vec![0; n];
        for slot in seq.iter_mut().rev() {
            *slot = code % k;
            code /= k;
        }
        seq
    })
}

fn transpose_tag_block(t: &Tensor) -> Tensor {
    let k = t.cols();
    let mut out = t.clone();
    for i in 0..k {
        for j in 0..k {
            out.set(i, j, t.get(j, i));
        }
    }
    out
}

fn crf_check(opts: &VerifyOptions) -> CheckResult {
    const K: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xC0FF);
    let mut worst: f64 = 0.0;
    let mut failure = None;
    for case in 0..opts.crf_instances {
        let n = rng.gen_range(1..=6);
        let s = Tensor::uniform(n, K, 2.0, &mut rng);
        let t = Tensor::uniform(K + 1, K, 2.0, &mut rng);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..K)).collect();
        let t_impl = match opts.fault {
            Some(Fault::TransposedTransitions) => transpose_tag_block(&t),
            None => t.clone(),
        };

        let scores: Vec<f64> = all_sequences(n, K).map(|seq| brute_force_score(&s, &t, &seq)).collect();
        let log_z = crate::autodiff::log_sum_exp(&scores);
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let nll = log_z - brute_force_score(&s, &t, &gold);

        let got_z = crf::log_partition(&s, &t_impl).expect("shapes agree");
        let got_nll = {
            let store = ParamStore::new();
            let mut g = Graph::new(&store);
            let sv = g.constant(s.clone());
            let tv = g.constant(t_impl.clone());
            let l = crf::crf_nll(&mut g, sv, tv, &gold).expect("valid labels");
            g.value(l).item()
        };
        let (path, got_best) = crf::viterbi_decode(&s, &t_impl).expect("shapes agree");
        let path_score = brute_force_score(&s, &t, &path);

        let errors = [
            ("log partition", (got_z - log_z).abs()),
            ("nll", (got_nll - nll).abs()),
            ("viterbi score", (got_best - best).abs()),
            ("viterbi path", (path_score - best).abs()),
        ];
        for (what, e) in errors {
            worst = worst.max(e);
            if e > CRF_TOLERANCE && failure.is_none() {
                failure = Some(format!("case {case} (N={n}): {what} off by {e:.3e}"));
            }
        }
    }
    CheckResult {
        name: "crf brute force".into(),
        passed: failure.is_none(),
        max_error: Some(worst),
        detail: failure.unwrap_or_else(|| format!("{} instances, N in 1..=6, 5 tags", opts.crf_instances)),
    }
}

// --------------------------------------------------------------------- GCN

fn gcn_oracle(heads: &[Option<usize>], h: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let n = heads.len();
    let mut neighbours: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for (i, head) in heads.iter().enumerate() {
        if let Some(p) = *head {
            neighbours[i].push(p);
            neighbours[p].push(i);
        }
    }
    let (d_in, d_out) = (w.rows(), w.cols());
    let mut out = Tensor::zeros(n, d_out);
    for i in 0..n {
        let deg = neighbours[i].len() as f64;
        let mut avg = vec![0.0; d_in];
        for &j in &neighbours[i] {
            for (a, x) in avg.iter_mut().zip(h.row(j)) {
                *a += x / deg;
            }
        }
        for c in 0..d_out {
            let mut z = b.get(0, c);
            for (r, a) in avg.iter().enumerate() {
                z += a * w.get(r, c);
            }
            out.set(i, c, z.max(0.0));
        }
    }
    out
}

fn gcn_check(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6C4);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.gcn_trees {
        let n = rng.gen_range(1..=opts.max_len);
        let (d_in, d_out) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let heads = random_tree(n, &mut rng);
        let h = Tensor::uniform(n, d_in, 1.0, &mut rng);
        let mut store = ParamStore::new();
        let layer = Affine {
            w: store.add("w", Tensor::uniform(d_in, d_out, 1.0, &mut rng)),
            b: store.add("b", Tensor::uniform(1, d_out, 1.0, &mut rng)),
        };
        let expected = gcn_oracle(&heads, &h, store.get(layer.w), store.get(layer.b));
        let mut g = Graph::new(&store);
        let hv = g.constant(h);
        let adj = g.constant(encoder::normalized_adjacency(&heads));
        let out = encoder::gcn_layer(&mut g, hv, adj, &layer).expect("shapes agree");
        worst = worst.max(g.value(out).max_abs_diff(&expected));
    }
    CheckResult {
        name: "gcn oracle".into(),
        passed: worst <= GCN_TOLERANCE,
        max_error: Some(worst),
        detail: format!("{} random trees, N <= {}", opts.gcn_trees, opts.max_len),
    }
}

// -------------------------------------------------------------------- path

/// Shortest path between `u` and `v` on the undirected tree, by BFS.
pub fn bfs_path(heads: &[Option<usize>], u: usize, v: usize) -> Vec<usize> {
    let n = heads.len();
    let mut adj = vec![Vec::new(); n];
    for (i, h) in heads.iter().enumerate() {
        if let Some(p) = *h {
            adj[i].push(p);
            adj[p].push(i);
        }
    }
    let mut prev = vec![usize::MAX; n];
    let mut queue = VecDeque::from([u]);
    prev[u] = u;
    while let Some(x) = queue.pop_front() {
        if x == v {
            break;
        }
        for &y in &adj[x] {
            if prev[y] == usize::MAX {
                prev[y] = x;
                queue.push_back(y);
            }
        }
    }
    let mut path = vec![v];
    let mut x = v;
    while x != u {
        x = prev[x];
        path.push(x);
    }
    path.reverse();
    path
}

fn path_check(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xBF5);
    let mut failure = None;
    for case in 0..opts.path_trees {
        let n = rng.gen_range(2..=opts.max_len.max(2));
        let heads = random_tree(n, &mut rng);
        let (term, def) = random_span_pair(n, &mut rng);
        let mut expected = vec![0u8; n];
        let ends = (dep_path::span_head(&heads, term), dep_path::span_head(&heads, def));
        for i in bfs_path(&heads, ends.0, ends.1) {
            expected[i] = 1;
        }
        let got = dep_path::path_labels(&heads, Some((term, def)));
        if got.d != expected && failure.is_none() {
            failure = Some(format!("case {case}: heads {heads:?}, term {term:?}, def {def:?}"));
        }
    }
    CheckResult {
        name: "path bfs oracle".into(),
        passed: failure.is_none(),
        max_error: None,
        detail: failure.unwrap_or_else(|| format!("{} random trees, N <= {}", opts.path_trees, opts.max_len)),
    }
}

/// Runs every check.
pub fn run(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = gradient_checks(opts.seed);
    checks.push(crf_check(opts));
    checks.push(gcn_check(opts));
    checks.push(path_check(opts));
    VerifyReport {
        seed: opts.seed,
        checks,
    }
}
