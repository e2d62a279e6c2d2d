//! Translation by anticipating the future source.
//!
//! At each decision step the language model samples `n` continuations of the
//! received source, the translator decodes under each `source ⧺ continuation`,
//! and the candidates are aggregated by majority vote. The vote share of the
//! winning output is the policy's write probability `pi`; the standalone
//! policy writes when `pi >= tau`. The expectation over the true future
//! source that this approximates has no computable form; sampling from the
//! LM is its Monte-Carlo stand-in.
//!
//! Base policies keep their own read/write schedule and take their
//! candidates from [`TafSource`] instead of plain decoding. For RALCP the
//! pooled `n * b` candidates are voted with `gamma = tau`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Continuation, SamplingParams, ScoredHypothesis, Translator};
use crate::policies::{
    majority_next, trim_commit, CandidateSource, Decision, LocalAgreementPolicy, PlainSource,
    Policy, PolicyConfig, PolicyKind, RalcpPolicy, StepContext, VoteResult, WaitKPolicy,
};
use crate::stream::{Action, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TafConfig {
    /// Continuations per step.
    pub n: usize,
    /// Maximum continuation length.
    pub l: usize,
    /// Top-k for continuation sampling.
    pub k: usize,
    /// Write threshold on the vote share.
    pub tau: f64,
    /// Candidates decoded per continuation.
    pub beam_per_continuation: usize,
    pub seed: u64,
    /// Prepend earlier sentences of the same document to the LM context.
    #[serde(rename = "document_context")]
    pub use_document_context: bool,
    /// Sampling temperature applied before top-k renormalization.
    pub temperature: f64,
}

impl Default for TafConfig {
    fn default() -> Self {
        TafConfig {
            n: 10,
            l: 10,
            k: 10,
            tau: 0.6,
            beam_per_continuation: 1,
            seed: 0,
            use_document_context: false,
            temperature: 1.0,
        }
    }
}

impl TafConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("taf.n must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("taf.k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!(
                "taf.tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if self.beam_per_continuation == 0 {
            return Err(Error::Config(
                "taf.beam_per_continuation must be >= 1".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("taf temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams {
            n: self.n,
            max_len: self.l,
            top_k: self.k,
            temperature: self.temperature,
        }
    }

    /// Size of the candidate pool.
    pub fn pool_size(&self) -> usize {
        self.n * self.beam_per_continuation
    }
}

/// Diagnostics of one anticipation step.
#[derive(Debug, Clone, PartialEq)]
pub struct AnticipationStep {
    pub continuations: Vec<Continuation>,
    pub candidate_pool: Vec<ScoredHypothesis>,
    pub vote: VoteResult,
    pub pi: f64,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the sampling done at one decision step; independent of how
/// sentences or continuations are scheduled.
pub fn step_seed(global_seed: u64, sentence_id: u64, step: usize) -> u64 {
    mix64(mix64(mix64(global_seed) ^ sentence_id) ^ step as u64)
}

/// Decodes `b` candidates under every `source_prefix ⧺ continuation`. Pool
/// order is (continuation index, beam rank). Identical continuations are
/// decoded once; distinct ones may run concurrently.
pub fn translate_under_continuations(
    mt: &dyn Translator,
    source_prefix: &[Token],
    continuations: &[Continuation],
    committed: &[Token],
    beam_per_continuation: usize,
    max_len: usize,
) -> Result<Vec<ScoredHypothesis>> {
    if continuations.is_empty() {
        return Err(Error::Precondition("need at least one continuation".into()));
    }
    let mut unique: Vec<&Continuation> = Vec::new();
    let mut slot: HashMap<&Continuation, usize> = HashMap::new();
    let index: Vec<usize> = continuations
        .iter()
        .map(|c| {
            *slot.entry(c).or_insert_with(|| {
                unique.push(c);
                unique.len() - 1
            })
        })
        .collect();

    let decoded: Vec<Result<Vec<ScoredHypothesis>>> = unique
        .par_iter()
        .map(|c| {
            let mut source = source_prefix.to_vec();
            source.extend(c.source_suffix());
            mt.beam_search(&source, committed, beam_per_continuation, max_len)
        })
        .collect();

    let mut by_unique = Vec::with_capacity(decoded.len());
    for (u, res) in decoded.into_iter().enumerate() {
        match res {
            Ok(v) => by_unique.push(v),
            Err(e) => {
                let first = index.iter().position(|&i| i == u).unwrap_or(u);
                return Err(Error::Continuation {
                    index: first,
                    source: Box::new(e),
                });
            }
        }
    }
    Ok(index
        .into_iter()
        .flat_map(|u| by_unique[u].iter().cloned())
        .collect())
}

/// Token-level plurality at position `already_committed` over the pool.
/// Ties go to the larger summed candidate probability, then the smaller
/// token. Candidates too short to have a token there abstain.
pub fn aggregate_majority(pool: &[ScoredHypothesis], already_committed: usize) -> VoteResult {
    majority_next(pool, already_committed)
}

/// Vote share of the winning output; zero for an empty vote.
pub fn policy_score(vote: &VoteResult) -> f64 {
    if vote.committed_prefix.is_empty() || vote.total == 0 {
        0.0
    } else {
        vote.support as f64 / vote.total as f64
    }
}

/// Candidate source that decodes under sampled continuations.
#[derive(Debug, Clone)]
pub struct TafSource {
    cfg: TafConfig,
}

impl TafSource {
    pub fn new(cfg: TafConfig) -> Self {
        TafSource { cfg }
    }

    pub fn config(&self) -> &TafConfig {
        &self.cfg
    }

    /// Fresh continuations for this step.
    pub fn continuations(&self, cx: &StepContext<'_>) -> Result<Vec<Continuation>> {
        if self.cfg.l == 0 {
            return Ok(vec![Continuation::default(); self.cfg.n]);
        }
        cx.models
            .lm()?
            .sample_continuations(cx.lm_context, &self.cfg.sampling(), cx.step_seed)
    }

    fn pool(
        &self,
        cx: &StepContext<'_>,
        conts: &[Continuation],
        prefix: &[Token],
        max_len: usize,
    ) -> Result<Vec<ScoredHypothesis>> {
        translate_under_continuations(
            cx.models.mt.as_ref(),
            &cx.state.source_read,
            conts,
            prefix,
            self.cfg.beam_per_continuation,
            max_len,
        )
    }

    /// One complete anticipation step for the next target token.
    pub fn anticipate(&self, cx: &StepContext<'_>) -> Result<AnticipationStep> {
        let continuations = self.continuations(cx)?;
        let candidate_pool =
            self.pool(cx, &continuations, &cx.state.hypothesis, cx.committed() + 1)?;
        let vote = aggregate_majority(&candidate_pool, cx.committed());
        let pi = policy_score(&vote);
        Ok(AnticipationStep {
            continuations,
            candidate_pool,
            vote,
            pi,
        })
    }
}

impl CandidateSource for TafSource {
    fn next_token_candidates(&self, cx: &StepContext<'_>) -> Result<Vec<ScoredHypothesis>> {
        Ok(self.anticipate(cx)?.candidate_pool)
    }

    fn full_candidates(
        &self,
        cx: &StepContext<'_>,
        _beam_width: usize,
    ) -> Result<Vec<ScoredHypothesis>> {
        let conts = self.continuations(cx)?;
        self.pool(cx, &conts, &cx.state.hypothesis, cx.max_target_len + 1)
    }

    /// Decodes token by token, each token being the majority over the
    /// continuations sampled once for this step.
    fn full_hypothesis(&self, cx: &StepContext<'_>) -> Result<Vec<Token>> {
        let conts = self.continuations(cx)?;
        let mut hyp = cx.state.hypothesis.clone();
        while hyp.len() <= cx.max_target_len {
            let pool = self.pool(cx, &conts, &hyp, hyp.len() + 1)?;
            let vote = aggregate_majority(&pool, hyp.len());
            let Some(tok) = vote.committed_prefix.into_iter().next() else {
                break;
            };
            let done = tok.is_eos;
            hyp.push(tok);
            if done {
                break;
            }
        }
        Ok(hyp)
    }
}

/// One step of the standalone anticipation policy. Once the source is
/// exhausted there is nothing to anticipate and the greedy token is written.
pub fn taf_step(
    cx: &StepContext<'_>,
    source: &TafSource,
) -> Result<(Decision, Option<AnticipationStep>)> {
    if cx.state.source_exhausted {
        let next = PlainSource.next_token_candidates(cx)?;
        let vote = aggregate_majority(&next, cx.committed());
        let tokens = if vote.committed_prefix.is_empty() {
            vec![Token::eos()]
        } else {
            vote.committed_prefix
        };
        return Ok((Decision::forced_write(tokens), None));
    }
    let step = source.anticipate(cx)?;
    let tokens = trim_commit(step.vote.committed_prefix.clone(), false);
    let action = if step.pi >= source.cfg.tau && !tokens.is_empty() {
        Action::write(tokens, step.pi)
    } else {
        Action::read(step.pi)
    };
    let decision = Decision {
        action,
        candidates: step.candidate_pool.len(),
        pi: step.pi,
    };
    Ok((decision, Some(step)))
}

/// Standalone anticipation policy.
pub struct TafPolicy {
    source: TafSource,
}

impl TafPolicy {
    pub fn new(cfg: TafConfig) -> Self {
        TafPolicy {
            source: TafSource::new(cfg),
        }
    }
}

impl Policy for TafPolicy {
    fn decide(&mut self, cx: &StepContext<'_>) -> Result<Decision> {
        Ok(taf_step(cx, &self.source)?.0)
    }
}

/// Puts anticipation under an existing policy's schedule.
pub fn compose_with_base(base: &PolicyConfig, cfg: &TafConfig) -> Result<Box<dyn Policy>> {
    cfg.validate()?;
    let source = TafSource::new(cfg.clone());
    Ok(match base.kind {
        PolicyKind::WaitKStrideN => {
            base.validate()?;
            Box::new(WaitKPolicy::new(base.k, base.n, source))
        }
        PolicyKind::LocalAgreement => {
            base.validate()?;
            Box::new(LocalAgreementPolicy::new(base.n, base.segment_size, source))
        }
        PolicyKind::Ralcp => {
            if cfg.pool_size() != base.beam_width {
                return Err(Error::Config(format!(
                    "n * beam_per_continuation = {} must equal the RALCP beam width {}",
                    cfg.pool_size(),
                    base.beam_width
                )));
            }
            let voted = PolicyConfig {
                gamma: cfg.tau,
                ..base.clone()
            };
            if !(cfg.tau > 0.0) {
                return Err(Error::Config("RALCP+TAF needs tau > 0".into()));
            }
            Box::new(RalcpPolicy::new(voted.gamma, voted.beam_width, source))
        }
        PolicyKind::Taf => Box::new(TafPolicy::new(cfg.clone())),
        PolicyKind::HoldN => {
            return Err(Error::Config(
                "Hold-N cannot be combined with anticipation".into(),
            ))
        }
    })
}
