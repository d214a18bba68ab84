//! Per-sentence Adam training with seeded shuffling, optional dev-set early
//! stopping and a tab-separated epoch log.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, ParamStore, Tensor};
use crate::metrics::{self, Granularity, MetricsError};
use crate::model::{total_loss, DropoutMasks, Example, Model, ModelError};
use crate::params::Hyperparams;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite gradient in tensor {tensor} at step {step}")]
    NonFiniteGradient { tensor: String, step: u64 },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("dev sentence {0} has no gold tags")]
    UnlabeledDev(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Fails before touching any parameter if a
/// gradient entry is NaN or infinite.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    hyper: &Hyperparams,
) -> Result<(), TrainError> {
    for (id, g) in grads.iter() {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                tensor: store.name(id).to_string(),
                step: state.step + 1,
            });
        }
    }
    state.step += 1;
    let (b1, b2) = (hyper.adam_beta1, hyper.adam_beta2);
    let t = state.step as f64;
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id).data();
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let p = store.get_mut(id).data_mut();
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.adam_eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One line of the epoch log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_f1: Option<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Shortest round-trip formatting, so a reloaded log compares equal.
        write!(f, "{}\t{}\t", self.epoch, self.mean_loss)?;
        match self.dev_f1 {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "-"),
        }
    }
}

/// Everything besides the parameters that a resumed run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Epochs completed so far.
    pub epoch: usize,
    pub adam: AdamState,
    pub best_f1: f64,
    pub best_epoch: usize,
    /// Epochs since the dev score last improved.
    pub stale: usize,
    /// Parameters from the best dev epoch.
    pub best: Option<ParamStore>,
    pub log: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(store: &ParamStore) -> Self {
        TrainState {
            epoch: 0,
            adam: AdamState::new(store),
            best_f1: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
            best: None,
            log: Vec::new(),
        }
    }

    /// The log as written to disk, one record per line.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// What the per-epoch callback asks the loop to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug)]
pub struct Trainer {
    pub model: Model,
    pub state: TrainState,
}

/// Seeded order for an epoch; independent of how many epochs ran before in
/// this process, so resumed runs shuffle identically.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let state = TrainState::new(&model.params.store);
        Trainer { model, state }
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.model.hyper
    }

    /// Loss and gradients for one sentence at the current parameters.
    pub fn loss_and_grads(&self, ex: &Example, dropout: Option<&DropoutMasks>) -> Result<(f64, Gradients), TrainError> {
        let params = &self.model.params;
        let mut g = Graph::new(&params.store);
        let terms = total_loss(&mut g, params, &self.model.hyper, ex, dropout)?;
        let loss = g.value(terms.total).item();
        let grads = g.backward(terms.total).map_err(ModelError::from)?;
        Ok((loss, grads))
    }

    /// One pass over `train` in a seeded shuffled order, one Adam step per
    /// sentence. Returns the mean loss.
    pub fn run_epoch(&mut self, train: &[Example]) -> Result<f64, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let hyper = self.model.hyper.clone();
        let mut rng = epoch_rng(hyper.seed, self.state.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for &i in &order {
            let ex = &train[i];
            let masks = (hyper.dropout > 0.0).then(|| {
                DropoutMasks::sample(
                    hyper.dropout,
                    ex.len(),
                    hyper.word_dim + hyper.pos_dim,
                    hyper.h_dim + hyper.g_dim,
                    &mut rng,
                )
            });
            let (loss, mut grads) = self.loss_and_grads(ex, masks.as_ref())?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: self.state.adam.step + 1,
                });
            }
            if hyper.grad_clip > 0.0 {
                clip_global_norm(&mut grads, hyper.grad_clip);
            }
            adam_step(&mut self.model.params.store, &grads, &mut self.state.adam, &hyper)?;
            total += loss;
        }
        self.state.epoch += 1;
        Ok(total / train.len() as f64)
    }

    /// Token macro F1 (class granularity) of the current parameters on `dev`.
    pub fn dev_f1(&self, dev: &[Example]) -> Result<f64, TrainError> {
        let preds = self.model.predict_batch(dev)?;
        let tagset = &self.model.tagset;
        let mut gold = Vec::with_capacity(dev.len());
        for (i, ex) in dev.iter().enumerate() {
            let tags = ex.tags.as_ref().ok_or(TrainError::UnlabeledDev(i))?;
            gold.push(tagset.decode(tags));
        }
        let pred: Vec<Vec<String>> = preds.iter().map(|p| tagset.decode(&p.tags)).collect();
        let m = metrics::token_macro_prf(&pred, &gold, tagset, Granularity::Class)?;
        Ok(m.macro_f1)
    }

    /// Runs until `hyper.epochs` epochs have completed in total, the dev
    /// score stops improving for `hyper.patience` epochs, or `on_epoch`
    /// returns [`Control::Stop`]. With a dev set, the best-scoring parameters
    /// are restored at the end.
    pub fn train<F>(&mut self, train: &[Example], dev: Option<&[Example]>, mut on_epoch: F) -> Result<(), TrainError>
    where
        F: FnMut(&EpochRecord, &Trainer) -> Control,
    {
        if train.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        while self.state.epoch < self.model.hyper.epochs && !self.patience_exhausted(dev.is_some()) {
            let mean_loss = self.run_epoch(train)?;
            let dev_f1 = dev.map(|d| self.dev_f1(d)).transpose()?;
            if let Some(f) = dev_f1 {
                if f > self.state.best_f1 {
                    self.state.best_f1 = f;
                    self.state.best_epoch = self.state.epoch;
                    self.state.stale = 0;
                    self.state.best = Some(self.model.params.store.clone());
                } else {
                    self.state.stale += 1;
                }
            }
            let record = EpochRecord {
                epoch: self.state.epoch,
                mean_loss,
                dev_f1,
            };
            self.state.log.push(record);
            if on_epoch(&record, self) == Control::Stop {
                return Ok(());
            }
        }
        self.restore_best();
        Ok(())
    }

    fn patience_exhausted(&self, has_dev: bool) -> bool {
        has_dev && self.model.hyper.patience > 0 && self.state.stale >= self.model.hyper.patience
    }

    /// Swaps in the best dev-scoring parameters, if any were recorded.
    pub fn restore_best(&mut self) {
        if let Some(best) = &self.state.best {
            self.model.params.store = best.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_synthetic_corpus, TagSchema, TagSet, Vocab};

    fn store_with(values: &[f64]) -> (ParamStore, Gradients) {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row_vector(values));
        let grads = Gradients::zeros_like(&store);
        (store, grads)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, grads) = store_with(&[1.0, -2.0]);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &grads, &mut state, &Hyperparams::default()).unwrap();
        assert_eq!(store.get(store.find("w").unwrap()).data(), &[1.0, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, mut grads) = store_with(&[0.0, 0.0]);
        let id = store.find("w").unwrap();
        grads.get_mut(id).data_mut().copy_from_slice(&[0.5, -3.0]);
        let mut state = AdamState::new(&store);
        let hyper = Hyperparams::default();
        adam_step(&mut store, &grads, &mut state, &hyper).unwrap();
        let p = store.get(id).data();
        assert!((p[0] + hyper.learning_rate).abs() < 1e-10);
        assert!((p[1] - hyper.learning_rate).abs() < 1e-10);
    }

    #[test]
    fn nan_gradient_names_tensor() {
        let (mut store, mut grads) = store_with(&[0.0]);
        let id = store.find("w").unwrap();
        grads.get_mut(id).data_mut()[0] = f64::NAN;
        let mut state = AdamState::new(&store);
        match adam_step(&mut store, &grads, &mut state, &Hyperparams::default()) {
            Err(TrainError::NonFiniteGradient { tensor, .. }) => assert_eq!(tensor, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state.step, 0);
        assert_eq!(store.get(id).data(), &[0.0]);
    }

    #[test]
    fn clipping() {
        let (store, mut grads) = store_with(&[0.0, 0.0]);
        let id = store.find("w").unwrap();
        grads.get_mut(id).data_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut grads, 1.0), 5.0);
        assert!((grads.get(id).data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn record_format() {
        let r = EpochRecord { epoch: 3, mean_loss: 1.5, dev_f1: None };
        assert_eq!(r.to_string(), "3\t1.5\t-");
        let r = EpochRecord { dev_f1: Some(0.5), ..r };
        assert_eq!(r.to_string(), "3\t1.5\t0.5");
    }

    fn tiny_trainer(seed: u64) -> (Trainer, Vec<Example>) {
        let corpus = make_synthetic_corpus(3, 6);
        let vocab = Vocab::build(&corpus);
        let hyper = Hyperparams { seed, epochs: 3, ..Hyperparams::tiny() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(hyper, vocab, TagSet::new(TagSchema::Basic), &mut rng);
        let examples = model.examples(&corpus).unwrap();
        (Trainer::new(model), examples)
    }

    #[test]
    fn same_seed_same_params() {
        let run = || {
            let (mut t, ex) = tiny_trainer(5);
            t.train(&ex, None, |_, _| Control::Continue).unwrap();
            t
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model.params.store, b.model.params.store);
        assert_eq!(a.state.log_text(), b.state.log_text());
        assert_eq!(a.state.log.len(), 3);
    }

    #[test]
    fn callback_can_stop() {
        let (mut t, ex) = tiny_trainer(5);
        t.train(&ex, None, |r, _| if r.epoch == 2 { Control::Stop } else { Control::Continue })
            .unwrap();
        assert_eq!(t.state.epoch, 2);
    }

    #[test]
    fn dev_scores_are_logged() {
        let (mut t, ex) = tiny_trainer(5);
        t.train(&ex, Some(&ex), |_, _| Control::Continue).unwrap();
        assert!(t.state.log.iter().all(|r| r.dev_f1.is_some()));
        assert!(t.state.best.is_some());
        assert_eq!(t.model.params.store, *t.state.best.as_ref().unwrap());
    }
}
