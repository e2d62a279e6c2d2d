use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{LanguageModel, NextTokenDistribution};
use crate::error::{Error, Result};
use crate::stream::Token;

/// Count-based n-gram language model with add-alpha smoothing that backs off
/// to the longest context suffix observed in training.
///
/// Sentences are trained as `<s> w_1 .. w_m </s>`; `<s>` only ever appears as
/// history, `</s>` is part of the predicted vocabulary. An empty context
/// yields the smoothed unigram distribution.
#[derive(Debug, Clone)]
pub struct NgramLm {
    order: usize,
    alpha: f64,
    vocab: BTreeSet<Token>,
    counts: HashMap<Vec<Token>, BTreeMap<Token, u64>>,
    totals: HashMap<Vec<Token>, u64>,
}

/// Fits an n-gram model on whitespace-tokenized sentences.
pub fn fit_ngram_lm<S: AsRef<[Token]>>(corpus: &[S], order: usize, alpha: f64) -> Result<NgramLm> {
    if order == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!(
            "smoothing alpha must be >= 0, got {alpha}"
        )));
    }
    if corpus.iter().all(|s| s.as_ref().is_empty()) {
        return Err(Error::Config(
            "cannot fit a language model on an empty corpus".into(),
        ));
    }

    let mut lm = NgramLm {
        order,
        alpha,
        vocab: BTreeSet::from([Token::eos()]),
        counts: HashMap::new(),
        totals: HashMap::new(),
    };
    for sentence in corpus {
        let sentence = sentence.as_ref();
        if sentence.is_empty() {
            continue;
        }
        let mut padded = Vec::with_capacity(sentence.len() + 2);
        padded.push(Token::bos());
        padded.extend(sentence.iter().filter(|t| !t.is_eos).cloned());
        padded.push(Token::eos());
        for pos in 1..padded.len() {
            let next = &padded[pos];
            lm.vocab.insert(next.clone());
            for h in 0..order.min(pos + 1) {
                let history = padded[pos - h..pos].to_vec();
                *lm.counts
                    .entry(history.clone())
                    .or_default()
                    .entry(next.clone())
                    .or_default() += 1;
                *lm.totals.entry(history).or_default() += 1;
            }
        }
    }
    Ok(lm)
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &BTreeSet<Token> {
        &self.vocab
    }

    /// Raw training count of `next` after `history`.
    pub fn count(&self, history: &[Token], next: &Token) -> u64 {
        self.counts
            .get(history)
            .and_then(|m| m.get(next))
            .copied()
            .unwrap_or(0)
    }

    /// Longest suffix of `context` (at most `order - 1` tokens) seen as a
    /// history during training.
    pub fn backoff_history<'a>(&self, context: &'a [Token]) -> &'a [Token] {
        let max_h = (self.order - 1).min(context.len());
        for h in (1..=max_h).rev() {
            let hist = &context[context.len() - h..];
            if self.totals.get(hist).copied().unwrap_or(0) > 0 {
                return hist;
            }
        }
        &context[context.len()..]
    }
}

impl LanguageModel for NgramLm {
    fn next_distribution(&self, context: &[Token]) -> Result<NextTokenDistribution> {
        let history = self.backoff_history(context);
        let total = self.totals.get(history).copied().unwrap_or(0) as f64;
        let counts = self.counts.get(history);
        let denom = total + self.alpha * self.vocab.len() as f64;
        let entries = self.vocab.iter().map(|tok| {
            let c = counts.and_then(|m| m.get(tok)).copied().unwrap_or(0) as f64;
            (tok.clone(), (c + self.alpha) / denom)
        });
        NextTokenDistribution::from_weights(entries)
    }
}
