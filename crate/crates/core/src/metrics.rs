//! Token-level macro precision/recall/F1, sentence-level scores and k-fold
//! splitting.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::TagSet;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("sentence {index}: {pred} predicted tags for {gold} gold tags")]
    LengthMismatch { index: usize, pred: usize, gold: usize },
    #[error("{pred} predictions for {gold} gold sequences")]
    CountMismatch { pred: usize, gold: usize },
    #[error("cannot split {size} items into {k} folds")]
    TooFewItems { size: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    BadK(usize),
}

/// How token tags map onto scored classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// `B-X` and `I-X` both count as class `X`.
    Class,
    /// Every non-`O` tag is its own class.
    Tag,
}

impl Granularity {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "class" => Some(Granularity::Class),
            "tag" => Some(Granularity::Tag),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    /// Gold tokens of this class.
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub per_class: BTreeMap<String, ClassScore>,
    pub macro_p: f64,
    pub macro_r: f64,
    /// Mean of per-class F1.
    pub macro_f1: f64,
    /// Harmonic mean of `macro_p` and `macro_r`, reported alongside.
    pub macro_f1_harmonic: f64,
    pub sentence_p: f64,
    pub sentence_r: f64,
    pub sentence_f1: f64,
    pub tokens: usize,
    pub sentences: usize,
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_name(tag: &str, granularity: Granularity) -> Option<&str> {
    if tag == "O" {
        return None;
    }
    match granularity {
        Granularity::Class => Some(tag.split_once('-').map_or(tag, |(_, k)| k)),
        Granularity::Tag => Some(tag),
    }
}

/// Macro P/R/F1 over span classes, counted per token across the corpus.
/// Classes come from `tagset`; a class that appears in neither gold nor
/// predictions is left out of the averages.
pub fn token_macro_prf<S: AsRef<str>>(
    pred: &[Vec<S>],
    gold: &[Vec<S>],
    tagset: &TagSet,
    granularity: Granularity,
) -> Result<Metrics, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::CountMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut counts: BTreeMap<String, ClassScore> = tagset
        .tags()
        .iter()
        .filter_map(|t| class_name(t, granularity))
        .map(|c| (c.to_string(), ClassScore::default()))
        .collect();

    let mut tokens = 0;
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(MetricsError::LengthMismatch {
                index,
                pred: p.len(),
                gold: g.len(),
            });
        }
        tokens += g.len();
        for (pt, gt) in p.iter().zip(g) {
            let pc = class_name(pt.as_ref(), granularity);
            let gc = class_name(gt.as_ref(), granularity);
            if let Some(c) = pc {
                let e = counts.entry(c.to_string()).or_default();
                e.predicted += 1;
                if pc == gc {
                    e.true_positives += 1;
                }
            }
            if let Some(c) = gc {
                counts.entry(c.to_string()).or_default().support += 1;
            }
        }
    }

    let mut per_class = BTreeMap::new();
    for (name, mut c) in counts {
        if c.support == 0 && c.predicted == 0 {
            continue;
        }
        c.precision = ratio(c.true_positives, c.predicted);
        c.recall = ratio(c.true_positives, c.support);
        c.f1 = f1(c.precision, c.recall);
        per_class.insert(name, c);
    }
    let k = per_class.len();
    let mean = |f: fn(&ClassScore) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.values().map(f).sum::<f64>() / k as f64
        }
    };
    let macro_p = mean(|c| c.precision);
    let macro_r = mean(|c| c.recall);
    let macro_f1 = mean(|c| c.f1);
    Ok(Metrics {
        macro_p,
        macro_r,
        macro_f1,
        macro_f1_harmonic: f1(macro_p, macro_r),
        per_class,
        tokens,
        ..Metrics::default()
    })
}

/// Precision, recall and F1 of the definitional class.
pub fn sentence_prf(pred: &[bool], gold: &[bool]) -> Result<(f64, f64, f64), MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::CountMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let tp = pred.iter().zip(gold).filter(|(p, g)| **p && **g).count();
    let predicted = pred.iter().filter(|p| **p).count();
    let actual = gold.iter().filter(|g| **g).count();
    let p = ratio(tp, predicted);
    let r = ratio(tp, actual);
    Ok((p, r, f1(p, r)))
}

/// One train/test partition, as indices into the corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then `k` contiguous test folds whose sizes differ by at
/// most one.
pub fn kfold_split(size: usize, k: usize, seed: u64) -> Result<Vec<Fold>, MetricsError> {
    if k < 2 {
        return Err(MetricsError::BadK(k));
    }
    if size < k {
        return Err(MetricsError::TooFewItems { size, k });
    }
    let mut order: Vec<usize> = (0..size).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = size / k;
    let extra = size % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let test = order[start..start + len].to_vec();
        let train = order[..start].iter().chain(&order[start + len..]).copied().collect();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}

impl Metrics {
    pub fn set_sentence_scores(&mut self, (p, r, f): (f64, f64, f64), sentences: usize) {
        self.sentence_p = p;
        self.sentence_r = r;
        self.sentence_f1 = f;
        self.sentences = sentences;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// Human-readable table.
    pub fn report(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<16} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}", "class", "precision", "recall", "f1", "tp", "pred", "gold").unwrap();
        for (name, c) in &self.per_class {
            writeln!(
                out,
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>8} {:>8}",
                name, c.precision, c.recall, c.f1, c.true_positives, c.predicted, c.support
            )
            .unwrap();
        }
        writeln!(out, "{:<16} {:>9.4} {:>9.4} {:>9.4}", "macro", self.macro_p, self.macro_r, self.macro_f1).unwrap();
        writeln!(out, "macro f1 (harmonic of macro p/r): {:.4}", self.macro_f1_harmonic).unwrap();
        writeln!(
            out,
            "sentence         {:>9.4} {:>9.4} {:>9.4}  ({} sentences, {} tokens)",
            self.sentence_p, self.sentence_r, self.sentence_f1, self.sentences, self.tokens
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TagSchema;

    fn seq(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions() {
        let ts = TagSet::new(TagSchema::Basic);
        let gold = vec![seq(&["B-Term", "I-Term", "O", "B-Definition"])];
        let m = token_macro_prf(&gold, &gold, &ts, Granularity::Class).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert!(m.per_class.values().all(|c| c.precision == 1.0 && c.recall == 1.0));
    }

    #[test]
    fn hand_computed_macro() {
        // Term: 1 predicted (correct) of 2 gold -> P=1, R=0.5
        // Definition: 2 predicted, 1 correct, 2 gold -> P=0.5, R=0.5
        let ts = TagSet::new(TagSchema::Basic);
        let gold = vec![seq(&["B-Term", "I-Term", "B-Definition", "I-Definition", "O"])];
        let pred = vec![seq(&["B-Term", "O", "B-Definition", "O", "B-Definition"])];
        let m = token_macro_prf(&pred, &gold, &ts, Granularity::Class).unwrap();
        let term = m.per_class["Term"];
        let def = m.per_class["Definition"];
        assert_eq!((term.precision, term.recall), (1.0, 0.5));
        assert_eq!((def.precision, def.recall), (0.5, 0.5));
        assert!((m.macro_f1 - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn all_outside_predictions() {
        let ts = TagSet::new(TagSchema::Basic);
        let gold = vec![seq(&["B-Term", "O", "B-Definition"])];
        let pred = vec![seq(&["O", "O", "O"])];
        let m = token_macro_prf(&pred, &gold, &ts, Granularity::Class).unwrap();
        assert_eq!((m.macro_p, m.macro_r, m.macro_f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn absent_class_excluded() {
        let ts = TagSet::new(TagSchema::Qualifier);
        let gold = vec![seq(&["B-Term", "O"])];
        let m = token_macro_prf(&gold, &gold, &ts, Granularity::Class).unwrap();
        assert_eq!(m.per_class.len(), 1);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn tag_granularity_keeps_prefixes() {
        let ts = TagSet::new(TagSchema::Basic);
        let gold = vec![seq(&["B-Term", "I-Term"])];
        let pred = vec![seq(&["B-Term", "B-Term"])];
        let m = token_macro_prf(&pred, &gold, &ts, Granularity::Tag).unwrap();
        assert_eq!(m.per_class["B-Term"].precision, 0.5);
        assert_eq!(m.per_class["I-Term"].recall, 0.0);
    }

    #[test]
    fn length_mismatch() {
        let ts = TagSet::new(TagSchema::Basic);
        let r = token_macro_prf(&[seq(&["O"])], &[seq(&["O", "O"])], &ts, Granularity::Class);
        assert!(matches!(r, Err(MetricsError::LengthMismatch { index: 0, .. })));
    }

    #[test]
    fn sentence_scores() {
        assert_eq!(sentence_prf(&[true, false], &[true, false]).unwrap(), (1.0, 1.0, 1.0));
        let (p, r, f) = sentence_prf(&[true, true, true, true], &[true, false, true, false]).unwrap();
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(sentence_prf(&[false, false], &[true, false]).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn folds() {
        let folds = kfold_split(10, 10, 3).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 9));
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(kfold_split(10, 10, 3).unwrap(), folds);
        let uneven = kfold_split(11, 3, 0).unwrap();
        let sizes: Vec<usize> = uneven.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![4, 4, 3]);
        assert!(kfold_split(2, 3, 0).is_err());
        assert!(kfold_split(5, 1, 0).is_err());
    }
}
