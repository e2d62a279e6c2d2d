use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{NextTokenDistribution, Translator};
use crate::error::{Error, Result};
use crate::stream::Token;

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_MAX_TARGET_LEN: usize = 1024;
/// Mass the lookahead translator puts on EOS when the source token it needs
/// has not been seen yet.
pub const PLACEHOLDER_EOS_MASS: f64 = 0.5;

/// Reads a `source<TAB>target` lexicon.
pub fn load_lexicon(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lexicon = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: expected source<TAB>target", n + 1),
        })?;
        let (src, tgt) = (src.trim(), tgt.trim());
        if src.is_empty() || tgt.is_empty() || tgt.contains(char::is_whitespace) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: bad entry", n + 1),
            });
        }
        lexicon.insert(src.to_string(), tgt.to_string());
    }
    Ok(lexicon)
}

/// Virtual source token standing for the `k`-th position past the end of a
/// sentence.
pub fn marker_token(k: usize) -> Token {
    Token::word(format!("<f{k}>"))
}

/// Splits a translator source into its real tokens and whether it was
/// terminated by EOS.
fn split_source(source: &[Token]) -> (&[Token], bool) {
    match source.iter().position(|t| t.is_eos) {
        Some(i) => (&source[..i], true),
        None => (source, false),
    }
}

fn map_token(lexicon: &BTreeMap<String, String>, tok: &Token) -> Token {
    match lexicon.get(tok.as_str()) {
        Some(t) => Token::word(t.as_str()),
        None => tok.clone(),
    }
}

/// `1 - epsilon` on `best`, `epsilon` spread evenly over the rest of `vocab`.
fn peaked(best: Token, vocab: &BTreeSet<Token>, epsilon: f64) -> Result<NextTokenDistribution> {
    let others = vocab.iter().filter(|t| **t != best).count();
    if others == 0 || epsilon == 0.0 {
        return Ok(NextTokenDistribution::point(best));
    }
    let share = epsilon / others as f64;
    NextTokenDistribution::from_weights(
        vocab
            .iter()
            .map(|t| {
                let p = if *t == best { 1.0 - epsilon } else { share };
                (t.clone(), p)
            })
            .chain((!vocab.contains(&best)).then(|| (best.clone(), 1.0 - epsilon))),
    )
}

/// Monotone word-for-word translator: target token `i` is the lexicon image
/// of source token `i` (tokens missing from the lexicon are copied), then EOS.
/// With an empty lexicon this is the copy translator.
#[derive(Debug, Clone)]
pub struct LexiconTranslator {
    lexicon: BTreeMap<String, String>,
    epsilon: f64,
    max_target_len: usize,
}

impl LexiconTranslator {
    pub fn new(lexicon: BTreeMap<String, String>) -> Self {
        LexiconTranslator {
            lexicon,
            epsilon: DEFAULT_EPSILON,
            max_target_len: DEFAULT_MAX_TARGET_LEN,
        }
    }

    /// The copy translator.
    pub fn copy() -> Self {
        Self::new(BTreeMap::new())
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_target_len(mut self, max: usize) -> Self {
        self.max_target_len = max;
        self
    }

    fn vocab(&self, real: &[Token]) -> BTreeSet<Token> {
        let mut vocab: BTreeSet<Token> = self
            .lexicon
            .values()
            .map(|t| Token::word(t.as_str()))
            .collect();
        vocab.extend(real.iter().map(|t| map_token(&self.lexicon, t)));
        vocab.insert(Token::eos());
        vocab
    }
}

impl Translator for LexiconTranslator {
    fn next_distribution(
        &self,
        source: &[Token],
        target_prefix: &[Token],
    ) -> Result<NextTokenDistribution> {
        if target_prefix.len() > self.max_target_len {
            return Err(Error::TooLong {
                prefix: target_prefix.len(),
                max: self.max_target_len,
            });
        }
        let (real, _) = split_source(source);
        let best = match real.get(target_prefix.len()) {
            Some(tok) => map_token(&self.lexicon, tok),
            None => Token::eos(),
        };
        peaked(best, &self.vocab(real), self.epsilon)
    }
}

/// Translator whose target token `i` is the lexicon image of source token
/// `i + delta`. Positions that fall past the end of a terminated source map
/// to sentence-final markers (`<f0>`, `<f1>`, ...). When the needed source
/// token has not arrived yet it emits a low-confidence placeholder: EOS with
/// probability [`PLACEHOLDER_EOS_MASS`] and the remaining mass uniform over
/// the target vocabulary.
#[derive(Debug, Clone)]
pub struct LookaheadTranslator {
    lexicon: BTreeMap<String, String>,
    delta: usize,
    epsilon: f64,
    max_target_len: usize,
}

impl LookaheadTranslator {
    pub fn new(lexicon: BTreeMap<String, String>, delta: usize) -> Self {
        LookaheadTranslator {
            lexicon,
            delta,
            epsilon: DEFAULT_EPSILON,
            max_target_len: DEFAULT_MAX_TARGET_LEN,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    fn vocab(&self, real: &[Token]) -> BTreeSet<Token> {
        let mut vocab: BTreeSet<Token> = self
            .lexicon
            .values()
            .map(|t| Token::word(t.as_str()))
            .collect();
        vocab.extend(real.iter().map(|t| map_token(&self.lexicon, t)));
        vocab.extend((0..self.delta).map(|k| map_token(&self.lexicon, &marker_token(k))));
        vocab.insert(Token::eos());
        vocab
    }

    fn placeholder(&self, vocab: &BTreeSet<Token>) -> Result<NextTokenDistribution> {
        let words = vocab.iter().filter(|t| !t.is_eos).count();
        if words == 0 {
            return Ok(NextTokenDistribution::point(Token::eos()));
        }
        let share = (1.0 - PLACEHOLDER_EOS_MASS) / words as f64;
        NextTokenDistribution::from_weights(vocab.iter().map(|t| {
            let p = if t.is_eos {
                PLACEHOLDER_EOS_MASS
            } else {
                share
            };
            (t.clone(), p)
        }))
    }
}

impl Translator for LookaheadTranslator {
    fn next_distribution(
        &self,
        source: &[Token],
        target_prefix: &[Token],
    ) -> Result<NextTokenDistribution> {
        if target_prefix.len() > self.max_target_len {
            return Err(Error::TooLong {
                prefix: target_prefix.len(),
                max: self.max_target_len,
            });
        }
        let (real, terminated) = split_source(source);
        let vocab = self.vocab(real);
        let pos = target_prefix.len();
        let needed = pos + self.delta;
        let best = if needed < real.len() {
            map_token(&self.lexicon, &real[needed])
        } else if !terminated {
            return self.placeholder(&vocab);
        } else if pos < real.len() {
            map_token(&self.lexicon, &marker_token(needed - real.len()))
        } else {
            Token::eos()
        };
        peaked(best, &vocab, self.epsilon)
    }
}
