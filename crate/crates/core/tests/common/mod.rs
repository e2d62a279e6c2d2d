//! Test-side oracles, written independently of the library implementations.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simulstream::error::Result;
use simulstream::harness::RunConfig;
use simulstream::models::{
    fit_ngram_lm, LookaheadTranslator, Models, NextTokenDistribution, NgramLm, ScoredHypothesis,
    Translator,
};
use simulstream::policies::{PolicyConfig, PolicyKind};
use simulstream::stream::{trajectory_probability, Action, Token, Trajectory};
use simulstream::synthetic::{generate, SyntheticCorpus, SyntheticSpec};
use simulstream::taf::TafConfig;

pub fn tok(s: &str) -> Token {
    Token::word(s)
}

pub fn toks(s: &str) -> Vec<Token> {
    s.split_whitespace().map(Token::word).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Longest common prefix by direct position scan.
pub fn strict_lcp(seqs: &[Vec<Token>]) -> Vec<Token> {
    let Some(first) = seqs.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, t) in first.iter().enumerate() {
        if seqs.iter().all(|s| s.get(i) == Some(t)) {
            out.push(t.clone());
        } else {
            break;
        }
    }
    out
}

/// Plurality at `pos`: winner by count, then summed probability (added in
/// ascending order), then token
/// order. Returns `(token, support)`.
pub fn plurality_oracle(pool: &[ScoredHypothesis], pos: usize) -> Option<(Token, usize)> {
    let mut weights: HashMap<&Token, Vec<f64>> = HashMap::new();
    for h in pool {
        if let Some(t) = h.tokens.get(pos) {
            weights.entry(t).or_default().push(h.log_score.exp());
        }
    }
    let mut best: Option<(&Token, usize, f64)> = None;
    for (t, mut w) in weights {
        w.sort_by(f64::total_cmp);
        let (c, m) = (w.len(), w.iter().sum::<f64>());
        let better = match best {
            None => true,
            Some((bt, bc, bm)) => c > bc || (c == bc && (m > bm || (m == bm && t < bt))),
        };
        if better {
            best = Some((t, c, m));
        }
    }
    best.map(|(t, c, _)| (t.clone(), c))
}

/// Lagging over per-unit delays, written from the definition: the lag of
/// unit i against the diagonal `(i-1) * |x| / rate_len`, averaged up to the
/// first unit emitted with the whole source read.
pub fn lagging_oracle(delays: &[usize], source_len: usize, rate_len: usize) -> f64 {
    let rate = source_len as f64 / rate_len as f64;
    let mut sum = 0.0;
    let mut count = 0;
    for (i, &d) in delays.iter().enumerate() {
        sum += d as f64 - i as f64 * rate;
        count += 1;
        if d >= source_len {
            break;
        }
    }
    sum / count as f64
}

pub fn laal_oracle(delays: &[usize], source_len: usize, ref_len: usize) -> f64 {
    lagging_oracle(delays, source_len, delays.len().max(ref_len))
}

pub fn al_oracle(delays: &[usize], source_len: usize) -> f64 {
    lagging_oracle(delays, source_len, delays.len())
}

/// Clipped n-gram matches and hypothesis n-gram count.
pub fn clipped_matches(hyp: &[&str], reference: &[&str], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[&str], usize> = HashMap::new();
    for g in reference.windows(n) {
        *ref_counts.entry(g).or_default() += 1;
    }
    let mut hyp_counts: HashMap<&[&str], usize> = HashMap::new();
    for g in hyp.windows(n) {
        *hyp_counts.entry(g).or_default() += 1;
    }
    let matched = hyp_counts
        .iter()
        .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len() - n + 1)
}

/// Corpus BLEU-4, unsmoothed, whitespace tokens.
pub fn bleu_oracle(hyps: &[String], refs: &[String]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let rf: Vec<&str> = rf.split_whitespace().collect();
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let (m, t) = clipped_matches(&h, &rf, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if matched.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..4)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * log_p.exp()
}

/// Translator whose next-token distribution is an arbitrary fixed function
/// of (source, prefix), drawn from a hash of both. `vocab` excludes EOS.
pub struct HashedTranslator {
    pub vocab: Vec<Token>,
    pub salt: u64,
}

impl Translator for HashedTranslator {
    fn next_distribution(
        &self,
        source: &[Token],
        prefix: &[Token],
    ) -> Result<NextTokenDistribution> {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.salt.hash(&mut h);
        source.hash(&mut h);
        prefix.hash(&mut h);
        let mut r = rng(h.finish());
        let tokens: Vec<Token> = self.vocab.iter().cloned().chain([Token::eos()]).collect();
        NextTokenDistribution::from_weights(tokens.into_iter().map(|t| (t, r.gen_range(0.05..1.0))))
    }
}

/// Target length is fixed by the first source token `n{len}`; the translator
/// writes `y{i}` at every position up to that length, then EOS, whatever else
/// it has read.
pub struct FixedLengthTranslator;

impl Translator for FixedLengthTranslator {
    fn next_distribution(
        &self,
        source: &[Token],
        prefix: &[Token],
    ) -> Result<NextTokenDistribution> {
        let len: usize = source
            .first()
            .and_then(|t| t.surface.strip_prefix('n'))
            .and_then(|n| n.parse().ok())
            .unwrap_or(0);
        if prefix.len() >= len {
            return Ok(NextTokenDistribution::point(Token::eos()));
        }
        Ok(NextTokenDistribution::point(Token::word(format!(
            "y{}",
            prefix.len() + 1
        ))))
    }
}

pub fn random_sentence<R: Rng>(r: &mut R, min: usize, max: usize, vocab: usize) -> String {
    let len = r.gen_range(min..=max);
    (0..len)
        .map(|_| format!("w{}", r.gen_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The default synthetic experiment: corpus, lookahead translator and an
/// order-3 LM fit on the held-out LM text.
pub struct Synthetic {
    pub corpus: SyntheticCorpus,
    pub lm: NgramLm,
}

impl Synthetic {
    pub fn new(spec: &SyntheticSpec, lm_order: usize, lm_alpha: f64) -> Self {
        let corpus = generate(spec).unwrap();
        let lm = fit_ngram_lm(&corpus.lm_corpus, lm_order, lm_alpha).unwrap();
        Synthetic { corpus, lm }
    }

    pub fn models(&self, delta: usize) -> Models {
        Models::new(Arc::new(LookaheadTranslator::new(
            self.corpus.lexicon.clone(),
            delta,
        )))
        .with_lm(Arc::new(self.lm.clone()))
    }
}

pub fn ralcp(gamma: f64, beam_width: usize) -> RunConfig {
    RunConfig {
        policy: PolicyConfig {
            kind: PolicyKind::Ralcp,
            gamma,
            beam_width,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn with_taf(mut run: RunConfig, taf: TafConfig) -> RunConfig {
    run.taf = Some(taf);
    run
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// A random but valid action sequence over `source_len` tokens: reads until
/// the source is exhausted, writes of 1..3 words, optionally a final EOS.
pub fn random_actions(seed: u64, source_len: usize) -> Vec<Action> {
    let mut r = rng(seed);
    let mut reads = 0;
    let mut actions = Vec::new();
    for i in 0..r.gen_range(1..25) {
        if reads <= source_len && r.gen_bool(0.5) {
            actions.push(Action::read(0.5));
            reads += 1;
        } else {
            let n = r.gen_range(1..=3);
            actions.push(Action::write(
                (0..n).map(|j| tok(&format!("t{i}_{j}"))).collect(),
                0.5,
            ));
        }
    }
    if r.gen_bool(0.3) {
        while reads <= source_len {
            actions.push(Action::read(0.5));
            reads += 1;
        }
        actions.push(Action::write(vec![tok("last"), Token::eos()], 1.0));
    }
    actions
}

/// Micro-instance: vocabulary {a, b}, |x| = 2, hypotheses forced to length 2.
/// The write probability and the MT distribution are arbitrary functions of
/// the state. Every (y, g) pair is enumerated by depth-first search and its
/// probability computed through `trajectory_probability`.
pub fn micro_instance_total(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut pi_table = std::collections::HashMap::new();
    let mut mt_table = std::collections::HashMap::new();
    for reads in 0..=3usize {
        for prefix in ["", "a", "b"] {
            pi_table.insert(
                (reads, prefix.to_string()),
                if reads == 3 {
                    1.0
                } else {
                    r.gen_range(0.01..0.99)
                },
            );
            mt_table.insert((reads, prefix.to_string()), r.gen_range(0.01..0.99));
        }
    }
    let source = toks("s0 s1");
    let mut total = 0.0;
    // actions, MT probabilities, policy probabilities, reads, prefix
    type Node = (Vec<Action>, Vec<f64>, Vec<f64>, usize, String);
    let mut stack: Vec<Node> = vec![(Vec::new(), Vec::new(), Vec::new(), 0, String::new())];
    while let Some((actions, mt, pol, reads, prefix)) = stack.pop() {
        if prefix.len() == 2 {
            let traj = Trajectory {
                actions,
                ..Default::default()
            };
            traj.replay(&source).unwrap();
            total += trajectory_probability(&traj, &mt, &pol).unwrap();
            continue;
        }
        let pi = pi_table[&(reads, prefix.clone())];
        if reads < 3 {
            let mut a = actions.clone();
            a.push(Action::read(pi));
            let mut p = pol.clone();
            p.push(pi);
            stack.push((a, mt.clone(), p, reads + 1, prefix.clone()));
        }
        let pa = mt_table[&(reads, prefix.clone())];
        for (w, pw) in [("a", pa), ("b", 1.0 - pa)] {
            let mut a = actions.clone();
            a.push(Action::write(vec![tok(w)], pi));
            let mut m = mt.clone();
            m.push(pw);
            let mut p = pol.clone();
            p.push(pi);
            stack.push((a, m, p, reads, format!("{prefix}{w}")));
        }
    }
    total
}

/// Every hypothesis the search space allows: sequences ending in EOS within
/// `max_len` tokens, or of exactly `max_len` tokens, ranked by probability.
pub fn enumerate_sequences<T: Translator>(
    mt: &T,
    source: &[Token],
    max_len: usize,
) -> Vec<ScoredHypothesis> {
    let mut out = Vec::new();
    let mut stack = vec![ScoredHypothesis {
        tokens: Vec::new(),
        log_score: 0.0,
    }];
    while let Some(h) = stack.pop() {
        if h.is_finished() || h.tokens.len() == max_len {
            out.push(h);
            continue;
        }
        let dist = mt.next_distribution(source, &h.tokens).unwrap();
        for (t, p) in dist.iter() {
            let mut tokens = h.tokens.clone();
            tokens.push(t.clone());
            stack.push(ScoredHypothesis {
                tokens,
                log_score: h.log_score + p.ln(),
            });
        }
    }
    out.sort_by(|a, b| {
        b.log_score
            .total_cmp(&a.log_score)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    out
}

pub fn random_pool<R: Rng>(r: &mut R, size: usize) -> Vec<ScoredHypothesis> {
    (0..size)
        .map(|_| {
            let len = r.gen_range(0..5);
            ScoredHypothesis {
                tokens: (0..len)
                    .map(|_| tok(["a", "b", "c"][r.gen_range(0..3)]))
                    .collect(),
                log_score: -(r.gen_range(0..4) as f64),
            }
        })
        .collect()
}
