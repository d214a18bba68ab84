//! The joint model: one encoder pass feeding the tagger, the sentence
//! classifier, the path predictor and the consistency objectives.

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::classifier::{self, DEFINITIONAL};
use crate::consistency;
use crate::corpus::{decode_spans, CorpusError, LabeledSpan, Sentence, Span, SpanKind, TagSet, Vocab};
use crate::crf::{self, CrfError};
use crate::dep_path::{self, PathLabels};
use crate::encoder::{self, EncoderOutputs};
use crate::params::{Hyperparams, ModelParams, ModelShape};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] AutodiffError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A sentence mapped to indices, with its supervision targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub words: Vec<usize>,
    pub pos: Vec<usize>,
    pub heads: Vec<Option<usize>>,
    pub tags: Option<Vec<usize>>,
    pub label: Option<bool>,
    /// First term/definition pair.
    pub pair: Option<(Span, Span)>,
    /// Path targets; present whenever the sentence is annotated.
    pub path: Option<PathLabels>,
}

impl Example {
    pub fn new(sentence: &Sentence, vocab: &Vocab, tagset: &TagSet) -> Result<Self, CorpusError> {
        let tags = sentence
            .gold_tags
            .as_ref()
            .map(|t| tagset.encode(t))
            .transpose()?;
        let pair = sentence.pair();
        let path = tags
            .as_ref()
            .map(|_| dep_path::path_labels(&sentence.heads, pair));
        Ok(Example {
            words: sentence.tokens.iter().map(|w| vocab.word(w)).collect(),
            pos: sentence.pos.iter().map(|p| vocab.pos(p)).collect(),
            heads: sentence.heads.clone(),
            tags,
            label: sentence.sent_label,
            pair,
            path,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Graph nodes of each loss term. Terms that are skipped (no supervision or
/// zero weight) are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub labeling: Option<Var>,
    pub classification: Option<Var>,
    pub path: Option<Var>,
    pub direct: Option<Var>,
    pub indirect: Option<Var>,
    pub global: Option<Var>,
}

/// Scalar values of [`LossTerms`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub labeling: f64,
    pub classification: f64,
    pub path: f64,
    pub direct: f64,
    pub indirect: f64,
    pub global: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph<'_>) -> LossValues {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).item());
        LossValues {
            total: g.value(self.total).item(),
            labeling: v(self.labeling),
            classification: v(self.classification),
            path: v(self.path),
            direct: v(self.direct),
            indirect: v(self.indirect),
            global: v(self.global),
        }
    }
}

/// Optional inverted-dropout masks for one training step.
#[derive(Clone, Debug)]
pub struct DropoutMasks {
    pub embeddings: Tensor,
    pub features: Tensor,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(rate: f64, n: usize, emb_dim: usize, feat_dim: usize, rng: &mut R) -> Self {
        let keep = 1.0 - rate;
        let mut mask = |cols: usize| {
            let data = (0..n * cols)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Tensor::from_vec(n, cols, data).expect("positive shape")
        };
        DropoutMasks {
            embeddings: mask(emb_dim),
            features: mask(feat_dim),
        }
    }
}

fn weighted(g: &mut Graph<'_>, terms: &mut Vec<Var>, weight: f64, x: Var) -> Result<(), AutodiffError> {
    let v = if weight == 1.0 { x } else { g.scale(x, weight)? };
    terms.push(v);
    Ok(())
}

/// `α L_lab + β L_cls + γ L_dep + η (a L1 + b L2 + c L3)` for one sentence.
///
/// Terms with zero weight are not built at all, so the result is exactly
/// independent of the parameters only they use. Sentences without gold tags
/// skip the tagging and path terms, and sentences without a term/definition
/// pair skip the consistency terms.
pub fn total_loss(
    g: &mut Graph<'_>,
    params: &ModelParams,
    hyper: &Hyperparams,
    ex: &Example,
    dropout: Option<&DropoutMasks>,
) -> Result<LossTerms, ModelError> {
    let masks = dropout.map(|m| (&m.embeddings, &m.features));
    let enc = encoder::encode(g, params, &ex.words, &ex.pos, &ex.heads, masks)?;
    total_loss_from(g, params, hyper, ex, &enc)
}

pub fn total_loss_from(
    g: &mut Graph<'_>,
    params: &ModelParams,
    hyper: &Hyperparams,
    ex: &Example,
    enc: &EncoderOutputs,
) -> Result<LossTerms, ModelError> {
    let mut parts = Vec::new();
    let mut out = LossTerms {
        total: enc.e,
        labeling: None,
        classification: None,
        path: None,
        direct: None,
        indirect: None,
        global: None,
    };

    if let (Some(tags), true) = (&ex.tags, hyper.alpha != 0.0) {
        let s = crf::emission_scores(g, enc.h_prime, &params.crf)?;
        let t = g.param(params.crf.transitions);
        let l = crf::crf_nll(g, s, t, tags)?;
        out.labeling = Some(l);
        weighted(g, &mut parts, hyper.alpha, l)?;
    }

    if let (Some(label), true) = (ex.label, hyper.beta != 0.0) {
        let pooled = classifier::sentence_pool(g, enc.h_hat)?;
        let cls = classifier::classify(g, pooled, &params.classifier)?;
        let l = classifier::classification_loss(g, &cls, label)?;
        out.classification = Some(l);
        weighted(g, &mut parts, hyper.beta, l)?;
    }

    if let (Some(path), true) = (&ex.path, hyper.gamma != 0.0) {
        let l = dep_path::path_loss(g, enc.h_hat, path, &params.path_head)?;
        out.path = Some(l);
        weighted(g, &mut parts, hyper.gamma, l)?;
    }

    if let (Some((term, def)), true) = (ex.pair, hyper.eta != 0.0) {
        let heads = &params.consistency;
        let mut sem = Vec::new();
        let needs_local = hyper.a != 0.0 || hyper.b != 0.0;
        let h_d = if needs_local {
            Some(consistency::span_pool(g, enc.h, def)?)
        } else {
            None
        };
        if hyper.a != 0.0 {
            let h_t = consistency::span_pool(g, enc.h, term)?;
            let l = consistency::direct_local_loss(g, h_t, h_d.expect("pooled above"))?;
            out.direct = Some(l);
            weighted(g, &mut sem, hyper.a, l)?;
        }
        if hyper.b != 0.0 {
            let l = consistency::indirect_local_loss(g, enc.h, h_d.expect("pooled above"), term, def, heads)?;
            out.indirect = Some(l);
            weighted(g, &mut sem, hyper.b, l)?;
        }
        if hyper.c != 0.0 {
            let n = g.value(enc.h).rows();
            let all: Vec<usize> = (0..n).collect();
            let h_s = consistency::rows_pool(g, enc.h, &all)?;
            let in_pair: Vec<usize> = term.indices().chain(def.indices()).collect();
            let h_td = consistency::rows_pool(g, enc.h, &in_pair)?;
            let l = consistency::global_consistency_loss(g, h_s, h_td, heads)?;
            out.global = Some(l);
            weighted(g, &mut sem, hyper.c, l)?;
        }
        if !sem.is_empty() {
            let l_sem = g.add_all(&sem)?;
            weighted(g, &mut parts, hyper.eta, l_sem)?;
        }
    }

    out.total = if parts.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        g.add_all(&parts)?
    };
    Ok(out)
}

/// Inference output for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub tags: Vec<usize>,
    pub tag_score: f64,
    pub definitional: bool,
    pub definitional_prob: f64,
    /// Tokens predicted to lie on the term–definition path.
    pub path: Vec<u8>,
}

pub fn predict(params: &ModelParams, ex: &Example) -> Result<Prediction, ModelError> {
    let mut g = Graph::new(&params.store);
    let enc = encoder::encode(&mut g, params, &ex.words, &ex.pos, &ex.heads, None)?;
    let s = crf::emission_scores(&mut g, enc.h_prime, &params.crf)?;
    let (tags, tag_score) = crf::viterbi_decode(g.value(s), params.store.get(params.crf.transitions))?;
    let pooled = classifier::sentence_pool(&mut g, enc.h_hat)?;
    let cls = classifier::classify(&mut g, pooled, &params.classifier)?;
    let probs = g.value(cls.probs).data().to_vec();
    let logits = dep_path::path_logits(&mut g, enc.h_hat, &params.path_head)?;
    let lv = g.value(logits);
    let path = (0..lv.rows()).map(|i| u8::from(lv.get(i, 1) > lv.get(i, 0))).collect();
    Ok(Prediction {
        tags,
        tag_score,
        definitional: classifier::predict_label(&probs),
        definitional_prob: probs[DEFINITIONAL],
        path,
    })
}

/// Trained parameters bundled with everything needed to apply them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub hyper: Hyperparams,
    pub vocab: Vocab,
    pub tagset: TagSet,
    pub params: ModelParams,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(hyper: Hyperparams, vocab: Vocab, tagset: TagSet, rng: &mut R) -> Self {
        let shape = ModelShape {
            num_words: vocab.num_words(),
            num_pos: vocab.num_pos(),
            num_tags: tagset.len(),
        };
        let params = ModelParams::init(&hyper, shape, rng);
        Model {
            hyper,
            vocab,
            tagset,
            params,
        }
    }

    pub fn example(&self, sentence: &Sentence) -> Result<Example, CorpusError> {
        Example::new(sentence, &self.vocab, &self.tagset)
    }

    /// Prepares a whole corpus, failing on the first sentence whose tags do
    /// not fit the tag set.
    pub fn examples(&self, corpus: &[Sentence]) -> Result<Vec<Example>, CorpusError> {
        corpus.iter().map(|s| self.example(s)).collect()
    }

    pub fn predict(&self, ex: &Example) -> Result<Prediction, ModelError> {
        predict(&self.params, ex)
    }

    /// Predictions for many examples, fanned out across threads when the
    /// `parallel` feature is on.
    pub fn predict_batch(&self, examples: &[Example]) -> Result<Vec<Prediction>, ModelError> {
        crate::par::map(examples, |ex| self.predict(ex)).into_iter().collect()
    }

    pub fn predict_batch_sequential(&self, examples: &[Example]) -> Result<Vec<Prediction>, ModelError> {
        crate::par::map_sequential(examples, |ex| self.predict(ex)).into_iter().collect()
    }

    /// Annotated copy of `sentence` with predicted tags and label.
    pub fn annotate(&self, sentence: &Sentence, pred: &Prediction) -> Sentence {
        let tags = self.tagset.decode(&pred.tags);
        let spans = decode_spans(&tags).expect("tag set only holds BIO tags");
        let mut out = sentence.clone();
        // Decoder output can contain orphan I- tags; normalize so the
        // rendered block re-parses.
        out.gold_tags = Some(crate::corpus::spans_to_tags(tags.len(), &spans));
        out.spans = spans;
        out.sent_label = Some(pred.definitional);
        out.predicted = true;
        out
    }
}

/// Term/definition pairs read off decoded tags: every term paired with every
/// definition, in order.
pub fn extract_pairs(spans: &[LabeledSpan]) -> Vec<(Span, Span)> {
    let terms = spans.iter().filter(|s| s.kind == SpanKind::Term);
    let defs: Vec<Span> = spans
        .iter()
        .filter(|s| s.kind == SpanKind::Definition)
        .map(|s| s.span)
        .collect();
    terms
        .flat_map(|t| defs.iter().map(move |d| (t.span, *d)))
        .collect()
}
