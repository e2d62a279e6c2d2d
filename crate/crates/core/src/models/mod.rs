//! Model interfaces (anticipatory language model, prefix-constrained
//! translator) and the toy implementations used for desk-scale experiments.

mod beam;
mod ngram;
pub mod remote;
mod sampling;
mod translators;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::Token;

pub use beam::beam_search;
pub use ngram::{fit_ngram_lm, NgramLm};
pub use sampling::{sample_continuations, sample_top_k, SamplingParams};
pub use translators::{
    load_lexicon, marker_token, LexiconTranslator, LookaheadTranslator, DEFAULT_EPSILON,
    DEFAULT_MAX_TARGET_LEN, PLACEHOLDER_EOS_MASS,
};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A normalized distribution over next tokens. Entries are kept in token order.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    entries: Vec<(Token, f64)>,
}

impl NextTokenDistribution {
    /// Builds a distribution from probabilities that must already sum to one.
    pub fn new(entries: impl IntoIterator<Item = (Token, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<Token, f64> = BTreeMap::new();
        for (tok, p) in entries {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::Model(format!("invalid probability {p} for {tok}")));
            }
            *merged.entry(tok).or_default() += p;
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Model(format!("distribution sums to {total}")));
        }
        Ok(NextTokenDistribution {
            entries: merged.into_iter().collect(),
        })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: impl IntoIterator<Item = (Token, f64)>) -> Result<Self> {
        let weights: Vec<_> = weights.into_iter().collect();
        let total: f64 = weights.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Model("weights have no positive mass".into()));
        }
        Self::new(weights.into_iter().map(|(t, w)| (t, w / total)))
    }

    /// All mass on one token.
    pub fn point(token: Token) -> Self {
        NextTokenDistribution {
            entries: vec![(token, 1.0)],
        }
    }

    pub fn prob(&self, token: &Token) -> f64 {
        self.entries
            .binary_search_by(|(t, _)| t.cmp(token))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Token, f64)> {
        self.entries.iter().map(|(t, p)| (t, *p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    /// Entries by descending probability; ties in token order.
    pub fn ranked(&self) -> Vec<(Token, f64)> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    pub fn argmax(&self) -> Option<&Token> {
        let mut best: Option<&(Token, f64)> = None;
        for e in &self.entries {
            // entries are in token order, so strict > keeps the smallest token on ties
            if best.is_none_or(|b| e.1 > b.1) {
                best = Some(e);
            }
        }
        best.map(|(t, _)| t)
    }

    /// The `k` most probable tokens renormalized, after applying temperature.
    pub fn top_k(&self, k: usize, temperature: f64) -> Vec<(Token, f64)> {
        let mut ranked = self.ranked();
        ranked.retain(|(_, p)| *p > 0.0);
        ranked.truncate(k.max(1));
        let weights: Vec<f64> = ranked
            .iter()
            .map(|(_, p)| {
                if temperature == 1.0 {
                    *p
                } else {
                    p.powf(1.0 / temperature)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        ranked
            .into_iter()
            .zip(weights)
            .map(|((t, _), w)| (t, w / total))
            .collect()
    }
}

/// Sampled future source tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Continuation {
    pub tokens: Vec<Token>,
    /// Sampling stopped because the LM produced end-of-sentence.
    pub truncated_at_eos: bool,
}

impl Continuation {
    /// Tokens appended to the received source before translation; ends with
    /// EOS when the LM predicted the end of the sentence.
    pub fn source_suffix(&self) -> Vec<Token> {
        let mut v = self.tokens.clone();
        if self.truncated_at_eos {
            v.push(Token::eos());
        }
        v
    }
}

/// A (possibly finished) target hypothesis. `tokens` include the target prefix
/// the search was constrained on and end with EOS when finished. `log_score`
/// covers only the tokens generated beyond the prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHypothesis {
    pub tokens: Vec<Token>,
    pub log_score: f64,
}

impl ScoredHypothesis {
    pub fn is_finished(&self) -> bool {
        self.tokens.last().is_some_and(|t| t.is_eos)
    }
}

pub trait LanguageModel: Send + Sync {
    fn next_distribution(&self, context: &[Token]) -> Result<NextTokenDistribution>;

    /// Draws continuations of `context`. Models that cannot expose next-token
    /// distributions override this.
    fn sample_continuations(
        &self,
        context: &[Token],
        params: &SamplingParams,
        seed: u64,
    ) -> Result<Vec<Continuation>> {
        sampling::sample_continuations(self, context, params, seed)
    }
}

pub trait Translator: Send + Sync {
    /// Next target token distribution given the source (terminated by EOS when
    /// complete) and the committed target prefix.
    fn next_distribution(
        &self,
        source: &[Token],
        target_prefix: &[Token],
    ) -> Result<NextTokenDistribution>;

    /// Prefix-constrained beam search; `max_len` bounds the total hypothesis
    /// length including prefix and EOS.
    fn beam_search(
        &self,
        source: &[Token],
        target_prefix: &[Token],
        beam_width: usize,
        max_len: usize,
    ) -> Result<Vec<ScoredHypothesis>> {
        beam::beam_search(self, source, target_prefix, beam_width, max_len)
    }
}

/// Model handles shared by every simulated sentence.
#[derive(Clone)]
pub struct Models {
    pub lm: Option<Arc<dyn LanguageModel>>,
    pub mt: Arc<dyn Translator>,
}

impl Models {
    pub fn new(mt: Arc<dyn Translator>) -> Self {
        Models { lm: None, mt }
    }

    pub fn with_lm(mut self, lm: Arc<dyn LanguageModel>) -> Self {
        self.lm = Some(lm);
        self
    }

    pub fn lm(&self) -> Result<&dyn LanguageModel> {
        self.lm.as_deref().ok_or_else(|| {
            Error::Config("policy needs a language model but none is configured".into())
        })
    }
}
