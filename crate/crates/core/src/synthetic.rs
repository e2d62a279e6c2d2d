//! Synthetic lookahead-δ language.
//!
//! Sources come from a deterministic order-3 process: each sentence is one
//! of `vocab_size` templates, every template starts with a distinct token,
//! and every adjacent token pair (including `<s> x0`) occurs in exactly one
//! template at exactly one position. The two previous tokens therefore fix
//! the next one, including the end of the sentence. Target token `i` is the
//! lexicon image of source token `i + δ`; the last δ target tokens are the
//! images of sentence-final markers.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::{DocumentCorpus, SentenceRecord};
use crate::models::marker_token;
use crate::stream::{detokenize, Token};

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub delta: usize,
    pub seed: u64,
    /// Size of the held-out LM training text.
    pub lm_sentences: usize,
    /// Sentences per document in the doc-id file.
    pub doc_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 20,
            sentences: 200,
            min_len: 10,
            max_len: 20,
            delta: 2,
            seed: 0,
            lm_sentences: 1000,
            doc_size: 10,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(
                "synthetic vocabulary needs at least 2 tokens".into(),
            ));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "bad length range {}..={} (minimum 2)",
                self.min_len, self.max_len
            )));
        }
        if self.doc_size == 0 {
            return Err(Error::Config("document size must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn source_word(i: usize) -> String {
    format!("w{i:02}")
}

pub fn target_word(i: usize) -> String {
    format!("v{i:02}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub templates: Vec<Vec<Token>>,
    pub sources: Vec<Vec<Token>>,
    pub references: Vec<Vec<Token>>,
    pub lexicon: BTreeMap<String, String>,
    /// Held-out sentences from the same process, for fitting the LM.
    pub lm_corpus: Vec<Vec<Token>>,
    pub doc_size: usize,
}

/// Paths written by [`SyntheticCorpus::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFiles {
    pub source: PathBuf,
    pub reference: PathBuf,
    pub docids: PathBuf,
    pub lexicon: PathBuf,
    pub lm_corpus: PathBuf,
}

/// Word ids of a template and the adjacent pairs it uses.
type Template = (Vec<usize>, Vec<(usize, usize)>);

fn build_template(
    rng: &mut ChaCha8Rng,
    first: usize,
    len: usize,
    vocab: usize,
    used: &HashSet<(usize, usize)>,
) -> Option<Template> {
    let mut seq = vec![first];
    let mut pairs = Vec::new();
    let mut choices: Vec<usize> = (0..vocab).collect();
    while seq.len() < len {
        let b = *seq.last().unwrap();
        choices.shuffle(rng);
        let c = choices
            .iter()
            .copied()
            .find(|&c| !used.contains(&(b, c)) && !pairs.contains(&(b, c)))?;
        pairs.push((b, c));
        seq.push(c);
    }
    Some((seq, pairs))
}

/// Lexicon image of source position `i + delta`, or of the end marker past
/// the end of the sentence.
pub fn lookahead_reference(
    source: &[Token],
    delta: usize,
    lexicon: &BTreeMap<String, String>,
) -> Vec<Token> {
    let m = source.len();
    (0..m)
        .map(|i| {
            let src = if i + delta < m {
                source[i + delta].clone()
            } else {
                marker_token(i + delta - m)
            };
            Token::word(lexicon.get(src.as_str()).cloned().unwrap_or(src.surface))
        })
        .collect()
}

/// Generates a corpus; deterministic in `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let v = spec.vocab_size;

    let mut firsts: Vec<usize> = (0..v).collect();
    firsts.shuffle(&mut rng);
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut templates = Vec::with_capacity(v);
    for &first in &firsts {
        let mut built = None;
        for _ in 0..MAX_ATTEMPTS {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            if let Some(t) = build_template(&mut rng, first, len, v, &used) {
                built = Some(t);
                break;
            }
        }
        let (seq, pairs) = built.ok_or_else(|| {
            Error::Config(format!(
                "cannot build {v} templates of length {}..={} with disjoint token pairs",
                spec.min_len, spec.max_len
            ))
        })?;
        used.extend(pairs);
        templates.push(
            seq.into_iter()
                .map(|i| Token::word(source_word(i)))
                .collect::<Vec<_>>(),
        );
    }

    let mut lexicon: BTreeMap<String, String> =
        (0..v).map(|i| (source_word(i), target_word(i))).collect();
    for k in 0..spec.delta {
        lexicon.insert(marker_token(k).surface, format!("e{k}"));
    }

    let sources: Vec<Vec<Token>> = (0..spec.sentences)
        .map(|_| templates[rng.gen_range(0..templates.len())].clone())
        .collect();
    let references = sources
        .iter()
        .map(|s| lookahead_reference(s, spec.delta, &lexicon))
        .collect();

    let mut lm_corpus = templates.clone();
    let extra = spec.lm_sentences.saturating_sub(templates.len());
    lm_corpus.extend((0..extra).map(|_| templates[rng.gen_range(0..templates.len())].clone()));
    lm_corpus.shuffle(&mut rng);

    Ok(SyntheticCorpus {
        templates,
        sources,
        references,
        lexicon,
        lm_corpus,
        doc_size: spec.doc_size,
    })
}

fn lines(seqs: &[Vec<Token>]) -> String {
    seqs.iter().map(|s| detokenize(s) + "\n").collect()
}

impl SyntheticCorpus {
    /// `(doc_id, sentence_index)` of sentence `i`.
    fn doc_of(&self, i: usize) -> (String, usize) {
        (format!("doc{:04}", i / self.doc_size), i % self.doc_size)
    }

    pub fn document_corpus(&self) -> DocumentCorpus {
        let sentences = self
            .sources
            .iter()
            .zip(&self.references)
            .enumerate()
            .map(|(i, (s, r))| {
                let (doc_id, index) = self.doc_of(i);
                SentenceRecord {
                    doc_id,
                    index,
                    source: detokenize(s),
                    reference: detokenize(r),
                }
            })
            .collect();
        DocumentCorpus::new(sentences).expect("generated documents are contiguous")
    }

    pub fn write(&self, dir: &Path) -> Result<SyntheticFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SyntheticFiles {
            source: dir.join("source.txt"),
            reference: dir.join("reference.txt"),
            docids: dir.join("docids.tsv"),
            lexicon: dir.join("lexicon.tsv"),
            lm_corpus: dir.join("lm_corpus.txt"),
        };
        let docids: String = (0..self.sources.len())
            .map(|i| {
                let (doc, idx) = self.doc_of(i);
                format!("{}\t{doc}\t{idx}\n", i + 1)
            })
            .collect();
        let lexicon: String = self
            .lexicon
            .iter()
            .map(|(s, t)| format!("{s}\t{t}\n"))
            .collect();
        for (path, text) in [
            (&files.source, lines(&self.sources)),
            (&files.reference, lines(&self.references)),
            (&files.docids, docids),
            (&files.lexicon, lexicon),
            (&files.lm_corpus, lines(&self.lm_corpus)),
        ] {
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_ngram_lm, LanguageModel};
    use std::collections::HashMap;

    #[test]
    fn lengths_and_vocab() {
        let c = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(c.sources.len(), 200);
        assert!(c.sources.iter().all(|s| (10..=20).contains(&s.len())));
        let vocab: HashSet<&str> = c.sources.iter().flatten().map(|t| t.as_str()).collect();
        assert!(vocab.len() <= 20);
        assert!(c
            .sources
            .iter()
            .zip(&c.references)
            .all(|(s, r)| s.len() == r.len()));
    }

    #[test]
    fn pairs_determine_successor() {
        let c = generate(&SyntheticSpec::default()).unwrap();
        let mut next: HashMap<(Token, Token), Token> = HashMap::new();
        for t in &c.templates {
            let padded: Vec<Token> = std::iter::once(Token::bos())
                .chain(t.iter().cloned())
                .chain(std::iter::once(Token::eos()))
                .collect();
            for w in padded.windows(3) {
                let prev = next.insert((w[0].clone(), w[1].clone()), w[2].clone());
                assert!(prev.is_none(), "pair {:?} {:?} repeats", w[0], w[1]);
            }
        }
    }

    #[test]
    fn delta_zero_is_lexicon_image() {
        let c = generate(&SyntheticSpec {
            delta: 0,
            ..Default::default()
        })
        .unwrap();
        for (s, r) in c.sources.iter().zip(&c.references) {
            let image: Vec<Token> = s
                .iter()
                .map(|t| Token::word(c.lexicon[t.as_str()].as_str()))
                .collect();
            assert_eq!(&image, r);
        }
    }

    #[test]
    fn reference_ends_with_markers() {
        let c = generate(&SyntheticSpec::default()).unwrap();
        let r = &c.references[0];
        assert_eq!(r[r.len() - 2].as_str(), "e0");
        assert_eq!(r[r.len() - 1].as_str(), "e1");
        assert_eq!(r[0].as_str(), c.lexicon[c.sources[0][2].as_str()]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            seed: 9,
            ..Default::default()
        };
        let a = generate(&spec)
            .unwrap()
            .write(&dir.path().join("a"))
            .unwrap();
        let b = generate(&spec)
            .unwrap()
            .write(&dir.path().join("b"))
            .unwrap();
        for (x, y) in [
            (&a.source, &b.source),
            (&a.reference, &b.reference),
            (&a.docids, &b.docids),
            (&a.lm_corpus, &b.lm_corpus),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let other = generate(&SyntheticSpec {
            seed: 10,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(other.sources, generate(&spec).unwrap().sources);
    }

    #[test]
    fn trigram_lm_predicts_next_token() {
        let c = generate(&SyntheticSpec::default()).unwrap();
        let alpha = 1e-6;
        let lm = fit_ngram_lm(&c.lm_corpus, 3, alpha).unwrap();
        for s in c.sources.iter().take(20) {
            let mut ctx = vec![Token::bos()];
            for tok in s.iter().chain(std::iter::once(&Token::eos())) {
                if ctx.len() >= 2 {
                    let d = lm.next_distribution(&ctx).unwrap();
                    assert!(d.prob(tok) > 1.0 - 1e-3, "{tok} after {ctx:?}");
                }
                ctx.push(tok.clone());
            }
        }
    }
}
