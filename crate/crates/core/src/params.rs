//! Hyperparameters and the full set of trainable tensors.

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::OOV_RANGE;

/// Model sizes, loss weights and optimizer settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub word_dim: usize,
    pub pos_dim: usize,
    /// BiLSTM output width, both directions together.
    pub h_dim: usize,
    pub g_dim: usize,
    pub gcn_layers: usize,
    /// Number of latent labels for the global consistency objective.
    pub latent_labels: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dropout: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            word_dim: 300,
            pos_dim: 50,
            h_dim: 200,
            g_dim: 200,
            gcn_layers: 2,
            latent_labels: 3,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            alpha: 1.0,
            beta: 10.0,
            gamma: 1.0,
            eta: 1.0,
            learning_rate: 0.003,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            patience: 10,
            seed: 1,
            dropout: 0.0,
            grad_clip: 0.0,
        }
    }
}

/// Hyperparameter names in serialization order.
pub const HYPER_KEYS: &[&str] = &[
    "word_dim",
    "pos_dim",
    "h_dim",
    "g_dim",
    "gcn_layers",
    "latent_labels",
    "a",
    "b",
    "c",
    "alpha",
    "beta",
    "gamma",
    "eta",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "epochs",
    "patience",
    "seed",
    "dropout",
    "grad_clip",
];

impl Hyperparams {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.trim()
                .parse()
                .map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "word_dim" => self.word_dim = num(key, value)?,
            "pos_dim" => self.pos_dim = num(key, value)?,
            "h_dim" => self.h_dim = num(key, value)?,
            "g_dim" => self.g_dim = num(key, value)?,
            "gcn_layers" => self.gcn_layers = num(key, value)?,
            "latent_labels" => self.latent_labels = num(key, value)?,
            "a" => self.a = num(key, value)?,
            "b" => self.b = num(key, value)?,
            "c" => self.c = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            _ => return Err(format!("unknown hyperparameter {key}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "word_dim" => self.word_dim.to_string(),
            "pos_dim" => self.pos_dim.to_string(),
            "h_dim" => self.h_dim.to_string(),
            "g_dim" => self.g_dim.to_string(),
            "gcn_layers" => self.gcn_layers.to_string(),
            "latent_labels" => self.latent_labels.to_string(),
            "a" => self.a.to_string(),
            "b" => self.b.to_string(),
            "c" => self.c.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "gamma" => self.gamma.to_string(),
            "eta" => self.eta.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "epochs" => self.epochs.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "dropout" => self.dropout.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            _ => return None,
        })
    }

    /// `key = value` lines in [`HYPER_KEYS`] order.
    pub fn to_text(&self) -> String {
        HYPER_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut h = Hyperparams::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("malformed line {line:?}"))?;
            h.set(k.trim(), v)?;
        }
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), String> {
        let dims = [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("h_dim", self.h_dim),
            ("g_dim", self.g_dim),
            ("gcn_layers", self.gcn_layers),
        ];
        for (k, v) in dims {
            if v == 0 {
                return Err(format!("{k} must be positive"));
            }
        }
        if !self.h_dim.is_multiple_of(2) {
            return Err("h_dim must be even (split across two directions)".into());
        }
        if self.latent_labels < 2 {
            return Err("latent_labels must be at least 2".into());
        }
        let weights = [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta", self.eta),
        ];
        for (k, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{k} must be a finite non-negative weight"));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err("adam betas must be in [0, 1)".into());
        }
        Ok(())
    }

    /// Small sizes for gradient checks and quick tests.
    pub fn tiny() -> Self {
        Hyperparams {
            word_dim: 5,
            pos_dim: 3,
            h_dim: 6,
            g_dim: 5,
            ..Hyperparams::default()
        }
    }
}

/// `x W + b`, with `W` stored as `in x out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).rows()
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).cols()
    }

    /// Plain evaluation without recording a graph.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut out = x.matmul(store.get(self.w));
        let b = store.get(self.b).data();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(b) {
                *o += bv;
            }
        }
        out
    }
}

/// Two affine layers with a ReLU between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub hidden: Affine,
    pub output: Affine,
}

impl FeedForward {
    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, AutodiffError> {
        let h = self.hidden.apply(g, x)?;
        let h = g.relu(h)?;
        self.output.apply(g, h)
    }
}

/// One LSTM direction. Gate blocks in column order: input, forget,
/// candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

impl LstmParams {
    pub fn hidden(&self, store: &ParamStore) -> usize {
        store.get(self.w_h).rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrfParams {
    /// Emission map from `h'` to tag scores.
    pub emission: Affine,
    /// `(tags + 1) x tags`; the last row holds transitions out of START.
    pub transitions: ParamId,
}

/// Discriminator and latent-label heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConsistencyHeads {
    /// Input `[h_i ; h_D]`, scalar logit output.
    pub discriminator: FeedForward,
    /// Shared by the sentence and term/definition vectors.
    pub latent: Affine,
}

/// Every trainable tensor and the handles the model uses to find them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub gcn: Vec<Affine>,
    pub crf: CrfParams,
    pub classifier: FeedForward,
    pub path_head: FeedForward,
    pub consistency: ConsistencyHeads,
}

/// Sizes that are not hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub num_words: usize,
    pub num_pos: usize,
    pub num_tags: usize,
}

/// Which initializer a tensor gets.
#[derive(Clone, Copy)]
enum Init {
    Zero,
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in` = rows.
    Scaled,
    Embedding,
}

struct Builder<'r, R: Rng + ?Sized> {
    store: ParamStore,
    rng: Option<&'r mut R>,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> ParamId {
        let t = match (&mut self.rng, init) {
            (None, _) | (_, Init::Zero) => Tensor::zeros(rows, cols),
            (Some(rng), Init::Scaled) => Tensor::uniform(rows, cols, 1.0 / (rows as f64).sqrt(), &mut **rng),
            (Some(rng), Init::Embedding) => Tensor::uniform(rows, cols, OOV_RANGE, &mut **rng),
        };
        self.store.add(name, t)
    }

    fn affine(&mut self, name: &str, input: usize, output: usize) -> Affine {
        Affine {
            w: self.add(&format!("{name}.w"), input, output, Init::Scaled),
            b: self.add(&format!("{name}.b"), 1, output, Init::Zero),
        }
    }

    fn feed_forward(&mut self, name: &str, input: usize, hidden: usize, output: usize) -> FeedForward {
        FeedForward {
            hidden: self.affine(&format!("{name}.hidden"), input, hidden),
            output: self.affine(&format!("{name}.output"), hidden, output),
        }
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w_x: self.add(&format!("{name}.w_x"), input, 4 * hidden, Init::Scaled),
            w_h: self.add(&format!("{name}.w_h"), hidden, 4 * hidden, Init::Scaled),
            b: self.add(&format!("{name}.b"), 1, 4 * hidden, Init::Zero),
        }
    }
}

impl ModelParams {
    fn build<R: Rng + ?Sized>(hyper: &Hyperparams, shape: ModelShape, rng: Option<&mut R>) -> Self {
        let mut b = Builder {
            store: ParamStore::new(),
            rng,
        };
        let input = hyper.word_dim + hyper.pos_dim;
        let half = hyper.h_dim / 2;
        let word_emb = b.add("embed.word", shape.num_words, hyper.word_dim, Init::Embedding);
        let pos_emb = b.add("embed.pos", shape.num_pos, hyper.pos_dim, Init::Embedding);
        let lstm_fwd = b.lstm("lstm.fwd", input, half);
        let lstm_bwd = b.lstm("lstm.bwd", input, half);
        let gcn = (0..hyper.gcn_layers)
            .map(|l| {
                let input = if l == 0 { hyper.h_dim } else { hyper.g_dim };
                b.affine(&format!("gcn.{l}"), input, hyper.g_dim)
            })
            .collect();
        let crf = CrfParams {
            emission: b.affine("crf.emission", hyper.h_dim + hyper.g_dim, shape.num_tags),
            transitions: b.add("crf.transitions", shape.num_tags + 1, shape.num_tags, Init::Zero),
        };
        let classifier = b.feed_forward("classifier", hyper.g_dim, hyper.g_dim, 2);
        let path_head = b.feed_forward("path", hyper.g_dim, hyper.g_dim, 2);
        let consistency = ConsistencyHeads {
            discriminator: b.feed_forward("discriminator", 2 * hyper.h_dim, hyper.g_dim, 1),
            latent: b.affine("latent", hyper.h_dim, hyper.latent_labels),
        };
        ModelParams {
            store: b.store,
            word_emb,
            pos_emb,
            lstm_fwd,
            lstm_bwd,
            gcn,
            crf,
            classifier,
            path_head,
            consistency,
        }
    }

    /// Freshly initialized parameters: scaled uniform weights, zero biases
    /// and transitions, embeddings uniform in `[-0.05, 0.05]`.
    pub fn init<R: Rng + ?Sized>(hyper: &Hyperparams, shape: ModelShape, rng: &mut R) -> Self {
        Self::build(hyper, shape, Some(rng))
    }

    /// All-zero parameters with the right layout.
    pub fn zeros(hyper: &Hyperparams, shape: ModelShape) -> Self {
        Self::build::<rand_chacha::ChaCha8Rng>(hyper, shape, None)
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            num_words: self.store.get(self.word_emb).rows(),
            num_pos: self.store.get(self.pos_emb).rows(),
            num_tags: self.store.get(self.crf.transitions).cols(),
        }
    }

    /// Replaces tensors by name from `other`, which must contain every
    /// tensor of this layout with the same shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), String> {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = self.store.name(id).to_string();
            let src = other
                .find(&name)
                .ok_or_else(|| format!("missing tensor {name}"))?;
            let t = other.get(src);
            if t.shape() != self.store.get(id).shape() {
                return Err(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    self.store.get(id).shape()
                ));
            }
            *self.store.get_mut(id) = t.clone();
        }
        if other.len() != self.store.len() {
            return Err(format!(
                "{} tensors supplied, layout has {}",
                other.len(),
                self.store.len()
            ));
        }
        Ok(())
    }

    /// Parameter ids owned by a head, for ablation checks.
    pub fn head_params(&self, head: Head) -> Vec<ParamId> {
        let affine = |a: &Affine| vec![a.w, a.b];
        let ff = |f: &FeedForward| [affine(&f.hidden), affine(&f.output)].concat();
        match head {
            Head::Labeling => [affine(&self.crf.emission), vec![self.crf.transitions]].concat(),
            Head::Classification => ff(&self.classifier),
            Head::Path => ff(&self.path_head),
            Head::Discriminator => ff(&self.consistency.discriminator),
            Head::Latent => affine(&self.consistency.latent),
        }
    }
}

/// Parameter groups that belong to exactly one loss term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Labeling,
    Classification,
    Path,
    Discriminator,
    Latent,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn hyper_text_round_trip() {
        let h = Hyperparams {
            beta: 2.5,
            seed: 99,
            ..Hyperparams::default()
        };
        let back = Hyperparams::from_text(&h.to_text()).unwrap();
        assert_eq!(back, h);
        assert!(Hyperparams::from_text("bogus = 1").is_err());
    }

    #[test]
    fn defaults_match_reported_settings() {
        let h = Hyperparams::default();
        assert_eq!((h.word_dim, h.pos_dim, h.h_dim, h.g_dim), (300, 50, 200, 200));
        assert_eq!(h.latent_labels, 3);
        assert_eq!((h.alpha, h.beta, h.gamma, h.eta), (1.0, 10.0, 1.0, 1.0));
        assert_eq!(h.learning_rate, 0.003);
    }

    #[test]
    fn layout_shapes() {
        let h = Hyperparams::tiny();
        let shape = ModelShape { num_words: 10, num_pos: 4, num_tags: 5 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init(&h, shape, &mut rng);
        assert_eq!(p.store.get(p.crf.transitions).shape(), (6, 5));
        assert_eq!(p.store.get(p.lstm_fwd.w_x).shape(), (8, 12));
        assert_eq!(p.gcn.len(), 2);
        assert_eq!(p.shape(), shape);
        assert!(p.store.get(p.gcn[0].b).data().iter().all(|&v| v == 0.0));
        let mut z = ModelParams::zeros(&h, shape);
        z.load_from(&p.store).unwrap();
        assert_eq!(z, p);
    }
}
