//! Rule-based simultaneous policies (Wait-K-Stride-N, Local Agreement,
//! Hold-N, RALCP), their commit/vote primitives, and the per-sentence policy
//! runtime shared with the anticipation engine.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Models, ScoredHypothesis};
use crate::stream::{Action, ActionKind, StreamState, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    WaitKStrideN,
    LocalAgreement,
    HoldN,
    Ralcp,
    /// Pure anticipation policy: write the majority token when its vote share
    /// reaches the threshold.
    Taf,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::WaitKStrideN => "waitk",
            PolicyKind::LocalAgreement => "la",
            PolicyKind::HoldN => "hold",
            PolicyKind::Ralcp => "ralcp",
            PolicyKind::Taf => "taf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Source tokens to wait for before the first write.
    #[serde(rename = "K")]
    pub k: usize,
    /// Wait-K stride, Local Agreement window, or Hold-N tail length.
    #[serde(rename = "N")]
    pub n: usize,
    /// Fraction of candidates that must agree on a RALCP prefix.
    pub gamma: f64,
    pub beam_width: usize,
    /// Source tokens read between Local Agreement / Hold-N hypotheses.
    pub segment_size: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::WaitKStrideN,
            k: 3,
            n: 1,
            gamma: 0.6,
            beam_width: 4,
            segment_size: 1,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.kind {
            PolicyKind::WaitKStrideN if self.k == 0 || self.n == 0 => bad(format!(
                "wait-k needs K, N >= 1 (got K={}, N={})",
                self.k, self.n
            )),
            PolicyKind::LocalAgreement if self.n == 0 => bad("local agreement needs N >= 1".into()),
            PolicyKind::LocalAgreement | PolicyKind::HoldN
                if !(1..=5).contains(&self.segment_size) =>
            {
                bad(format!(
                    "segment size must be in 1..=5, got {}",
                    self.segment_size
                ))
            }
            PolicyKind::Ralcp if !(self.gamma > 0.0 && self.gamma <= 1.0) => {
                bad(format!("gamma must be in (0, 1], got {}", self.gamma))
            }
            PolicyKind::Ralcp if self.beam_width == 0 => bad("beam width must be >= 1".into()),
            _ => Ok(()),
        }
    }
}

/// Outcome of a prefix vote.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoteResult {
    pub committed_prefix: Vec<Token>,
    pub support: usize,
    pub total: usize,
}

impl VoteResult {
    fn empty(total: usize) -> Self {
        VoteResult {
            committed_prefix: Vec::new(),
            support: 0,
            total,
        }
    }
}

/// Longest common prefix of token sequences.
pub fn longest_common_prefix<S: AsRef<[Token]>>(seqs: &[S]) -> Vec<Token> {
    let Some((first, rest)) = seqs.split_first() else {
        return Vec::new();
    };
    let first = first.as_ref();
    let len = rest.iter().fold(first.len(), |len, s| {
        let s = s.as_ref();
        first[..len]
            .iter()
            .zip(s)
            .take_while(|(a, b)| a == b)
            .count()
    });
    first[..len].to_vec()
}

/// Wait-K-Stride-N schedule. READ while fewer than `k` tokens have been read,
/// then WRITE while `i < n * (j - k + 1)`; always WRITE once the source is
/// exhausted.
pub fn wait_k_stride_n_decide(state: &StreamState, k: usize, n: usize) -> ActionKind {
    let j = state.source_read.len();
    let i = state.hypothesis.len();
    if state.source_exhausted {
        ActionKind::Write
    } else if j < k {
        ActionKind::Read
    } else if i < n * (j + 1 - k) {
        ActionKind::Write
    } else {
        ActionKind::Read
    }
}

/// Commits the longest common prefix of the most recent hypotheses beyond the
/// first `already_committed` tokens.
pub fn local_agreement_commit<S: AsRef<[Token]>>(
    recent: &[S],
    already_committed: usize,
) -> VoteResult {
    let lcp = longest_common_prefix(recent);
    if lcp.len() <= already_committed {
        return VoteResult::empty(recent.len());
    }
    VoteResult {
        committed_prefix: lcp[already_committed..].to_vec(),
        support: recent.len(),
        total: recent.len(),
    }
}

/// Commits the hypothesis minus its last `n` tokens.
pub fn hold_n_commit(hypothesis: &[Token], n: usize, already_committed: usize) -> VoteResult {
    let end = hypothesis.len().saturating_sub(n).max(already_committed);
    if end <= already_committed || already_committed > hypothesis.len() {
        return VoteResult::empty(1);
    }
    VoteResult {
        committed_prefix: hypothesis[already_committed..end].to_vec(),
        support: 1,
        total: 1,
    }
}

/// Plurality among candidates at `pos`, restricted to `members`. Ties go to the
/// token with the larger summed candidate probability, then the smaller token.
/// Weights are summed in sorted order so the result does not depend on the
/// order of the pool.
pub(crate) fn plurality(
    candidates: &[ScoredHypothesis],
    members: impl Iterator<Item = usize>,
    pos: usize,
) -> Option<(&Token, usize)> {
    let mut tally: Vec<(&Token, Vec<f64>)> = Vec::new();
    for idx in members {
        let cand = &candidates[idx];
        let Some(tok) = cand.tokens.get(pos) else {
            continue;
        };
        let weight = cand.log_score.exp();
        match tally.iter_mut().find(|(t, _)| *t == tok) {
            Some(entry) => entry.1.push(weight),
            None => tally.push((tok, vec![weight])),
        }
    }
    tally
        .into_iter()
        .map(|(t, mut w)| {
            w.sort_by(f64::total_cmp);
            (t, w.len(), w.iter().sum::<f64>())
        })
        .max_by(|a, b| {
            a.1.cmp(&b.1)
                .then_with(|| a.2.total_cmp(&b.2))
                .then_with(|| b.0.cmp(a.0))
        })
        .map(|(t, c, _)| (t, c))
}

/// `count / total >= gamma`, tolerant to rounding in `gamma`.
pub(crate) fn meets_fraction(count: usize, total: usize, gamma: f64) -> bool {
    count as f64 / total as f64 >= gamma - 1e-12
}

/// Relaxed longest common prefix. Starting at `already_committed`, the most
/// frequent token among the surviving candidates is committed as long as its
/// count is at least `gamma` times the original number of candidates;
/// candidates that disagree are pruned.
pub fn ralcp_vote(
    candidates: &[ScoredHypothesis],
    gamma: f64,
    already_committed: usize,
) -> VoteResult {
    let total = candidates.len();
    let mut result = VoteResult::empty(total);
    if total == 0 {
        return result;
    }
    let mut survivors: Vec<usize> = (0..total).collect();
    let mut pos = already_committed;
    while let Some((tok, count)) = plurality(candidates, survivors.iter().copied(), pos) {
        if !meets_fraction(count, total, gamma) {
            break;
        }
        let tok = tok.clone();
        survivors.retain(|&i| candidates[i].tokens.get(pos) == Some(&tok));
        result.committed_prefix.push(tok);
        result.support = count;
        pos += 1;
    }
    result
}

/// Drops EOS (and anything after it) from a commit unless the source is
/// exhausted: a sentence cannot end before its source does.
pub fn trim_commit(mut tokens: Vec<Token>, source_exhausted: bool) -> Vec<Token> {
    if let Some(i) = tokens.iter().position(|t| t.is_eos) {
        tokens.truncate(if source_exhausted { i + 1 } else { i });
    }
    tokens
}

/// Inputs to one policy decision.
pub struct StepContext<'a> {
    pub state: &'a StreamState,
    /// Language model context (sentence-start marker, optional document
    /// history, then the source read so far).
    pub lm_context: &'a [Token],
    pub models: &'a Models,
    /// Seed for any sampling done at this step.
    pub step_seed: u64,
    /// Upper bound on the total hypothesis length.
    pub max_target_len: usize,
}

impl StepContext<'_> {
    pub fn committed(&self) -> usize {
        self.state.hypothesis.len()
    }

    /// Beam search over the translator source for the current state.
    pub fn plain_beam(&self, beam_width: usize, max_len: usize) -> Result<Vec<ScoredHypothesis>> {
        self.models.mt.beam_search(
            &self.state.translator_source(),
            &self.state.hypothesis,
            beam_width,
            max_len,
        )
    }

    /// Remaining tokens of the best `beam_width` completion.
    pub fn completion(&self, beam_width: usize) -> Result<Vec<Token>> {
        let hyps = self.plain_beam(beam_width, self.max_target_len + 1)?;
        let best = hyps
            .into_iter()
            .next()
            .ok_or_else(|| Error::Model("beam search returned no hypothesis".into()))?;
        Ok(best.tokens[self.committed()..].to_vec())
    }
}

/// A decision plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub candidates: usize,
    pub pi: f64,
}

impl Decision {
    pub fn forced_read() -> Self {
        Decision {
            action: Action::read(1.0),
            candidates: 0,
            pi: 0.0,
        }
    }

    pub fn forced_write(tokens: Vec<Token>) -> Self {
        Decision {
            action: Action::write(tokens, 1.0),
            candidates: 1,
            pi: 1.0,
        }
    }
}

/// Per-sentence policy instance. Implementations must WRITE whenever the
/// source is exhausted.
pub trait Policy: Send {
    fn decide(&mut self, cx: &StepContext<'_>) -> Result<Decision>;
}

/// Where policies get their translation candidates from: the translator run
/// on the received source, or the anticipation engine.
pub trait CandidateSource: Send + Sync {
    /// Candidates that extend the committed hypothesis by one token.
    fn next_token_candidates(&self, cx: &StepContext<'_>) -> Result<Vec<ScoredHypothesis>>;

    /// Full-length candidates for prefix voting.
    fn full_candidates(
        &self,
        cx: &StepContext<'_>,
        beam_width: usize,
    ) -> Result<Vec<ScoredHypothesis>>;

    /// One full hypothesis (including the committed prefix).
    fn full_hypothesis(&self, cx: &StepContext<'_>) -> Result<Vec<Token>>;
}

/// Decoding on the received source only.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlainSource;

impl CandidateSource for PlainSource {
    fn next_token_candidates(&self, cx: &StepContext<'_>) -> Result<Vec<ScoredHypothesis>> {
        cx.plain_beam(1, cx.committed() + 1)
    }

    fn full_candidates(
        &self,
        cx: &StepContext<'_>,
        beam_width: usize,
    ) -> Result<Vec<ScoredHypothesis>> {
        cx.plain_beam(beam_width, cx.max_target_len + 1)
    }

    fn full_hypothesis(&self, cx: &StepContext<'_>) -> Result<Vec<Token>> {
        let best = cx.plain_beam(1, cx.max_target_len + 1)?;
        Ok(best
            .into_iter()
            .next()
            .map(|h| h.tokens)
            .unwrap_or_default())
    }
}

/// Majority next token from a pool of one-step candidates.
pub(crate) fn majority_next(pool: &[ScoredHypothesis], pos: usize) -> VoteResult {
    match plurality(pool, 0..pool.len(), pos) {
        Some((tok, support)) => VoteResult {
            committed_prefix: vec![tok.clone()],
            support,
            total: pool.len(),
        },
        None => VoteResult::empty(pool.len()),
    }
}

fn vote_pi(vote: &VoteResult) -> f64 {
    if vote.committed_prefix.is_empty() || vote.total == 0 {
        0.0
    } else {
        vote.support as f64 / vote.total as f64
    }
}

/// Wait-K-Stride-N; each written token is the majority of the candidate
/// source's next-token pool (the greedy token for plain decoding).
pub struct WaitKPolicy<S> {
    k: usize,
    n: usize,
    source: S,
}

impl<S: CandidateSource> WaitKPolicy<S> {
    pub fn new(k: usize, n: usize, source: S) -> Self {
        WaitKPolicy { k, n, source }
    }
}

impl<S: CandidateSource> Policy for WaitKPolicy<S> {
    fn decide(&mut self, cx: &StepContext<'_>) -> Result<Decision> {
        let state = cx.state;
        if state.source_exhausted {
            let next = PlainSource.next_token_candidates(cx)?;
            let tok = majority_next(&next, cx.committed()).committed_prefix;
            return Ok(Decision::forced_write(if tok.is_empty() {
                vec![Token::eos()]
            } else {
                tok
            }));
        }
        if wait_k_stride_n_decide(state, self.k, self.n) == ActionKind::Read {
            return Ok(Decision::forced_read());
        }
        let pool = self.source.next_token_candidates(cx)?;
        let vote = majority_next(&pool, cx.committed());
        let pi = vote_pi(&vote);
        let tokens = trim_commit(vote.committed_prefix, false);
        if tokens.is_empty() {
            return Ok(Decision {
                action: Action::read(1.0),
                candidates: pool.len(),
                pi,
            });
        }
        Ok(Decision {
            action: Action::write(tokens, 1.0),
            candidates: pool.len(),
            pi,
        })
    }
}

/// Shared bookkeeping for policies that act once per source segment.
#[derive(Debug, Clone)]
struct SegmentClock {
    segment: usize,
    last: Option<usize>,
}

impl SegmentClock {
    fn new(segment: usize) -> Self {
        SegmentClock {
            segment,
            last: None,
        }
    }

    /// True when a new segment has arrived since the last evaluation.
    fn due(&mut self, read: usize) -> bool {
        if read == 0 || self.last == Some(read) {
            return false;
        }
        if read - self.last.unwrap_or(0) < self.segment {
            return false;
        }
        self.last = Some(read);
        true
    }
}

/// Local Agreement-N: after each segment generate a full hypothesis and
/// commit the longest common prefix of the last `window` hypotheses.
pub struct LocalAgreementPolicy<S> {
    window: usize,
    clock: SegmentClock,
    history: VecDeque<Vec<Token>>,
    source: S,
}

impl<S: CandidateSource> LocalAgreementPolicy<S> {
    pub fn new(window: usize, segment_size: usize, source: S) -> Self {
        LocalAgreementPolicy {
            window,
            clock: SegmentClock::new(segment_size),
            history: VecDeque::new(),
            source,
        }
    }
}

impl<S: CandidateSource> Policy for LocalAgreementPolicy<S> {
    fn decide(&mut self, cx: &StepContext<'_>) -> Result<Decision> {
        if cx.state.source_exhausted {
            return Ok(Decision::forced_write(cx.completion(1)?));
        }
        if !self.clock.due(cx.state.source_read.len()) {
            return Ok(Decision::forced_read());
        }
        let hyp = self.source.full_hypothesis(cx)?;
        self.history.push_back(hyp);
        while self.history.len() > self.window {
            self.history.pop_front();
        }
        if self.history.len() < self.window {
            return Ok(Decision::forced_read());
        }
        let recent: Vec<&Vec<Token>> = self.history.iter().collect();
        let vote = local_agreement_commit(&recent, cx.committed());
        let tokens = trim_commit(vote.committed_prefix, false);
        let action = if tokens.is_empty() {
            Action::read(1.0)
        } else {
            Action::write(tokens, 1.0)
        };
        Ok(Decision {
            action,
            candidates: self.window,
            pi: 1.0,
        })
    }
}

/// Hold-N: after each segment write the full hypothesis minus its last
/// `hold` tokens.
pub struct HoldNPolicy {
    hold: usize,
    clock: SegmentClock,
}

impl HoldNPolicy {
    pub fn new(hold: usize, segment_size: usize) -> Self {
        HoldNPolicy {
            hold,
            clock: SegmentClock::new(segment_size),
        }
    }
}

impl Policy for HoldNPolicy {
    fn decide(&mut self, cx: &StepContext<'_>) -> Result<Decision> {
        if cx.state.source_exhausted {
            return Ok(Decision::forced_write(cx.completion(1)?));
        }
        if !self.clock.due(cx.state.source_read.len()) {
            return Ok(Decision::forced_read());
        }
        let mut hyp = PlainSource.full_hypothesis(cx)?;
        hyp = trim_commit(hyp, false);
        let vote = hold_n_commit(&hyp, self.hold, cx.committed());
        let action = if vote.committed_prefix.is_empty() {
            Action::read(1.0)
        } else {
            Action::write(vote.committed_prefix, 1.0)
        };
        Ok(Decision {
            action,
            candidates: 1,
            pi: 1.0,
        })
    }
}

/// RALCP: after each source token, vote a relaxed common prefix over beam
/// candidates. Once the source is exhausted the best beam is written.
pub struct RalcpPolicy<S> {
    gamma: f64,
    beam_width: usize,
    clock: SegmentClock,
    source: S,
}

impl<S: CandidateSource> RalcpPolicy<S> {
    pub fn new(gamma: f64, beam_width: usize, source: S) -> Self {
        RalcpPolicy {
            gamma,
            beam_width,
            clock: SegmentClock::new(1),
            source,
        }
    }
}

impl<S: CandidateSource> Policy for RalcpPolicy<S> {
    fn decide(&mut self, cx: &StepContext<'_>) -> Result<Decision> {
        if cx.state.source_exhausted {
            return Ok(Decision::forced_write(cx.completion(self.beam_width)?));
        }
        if !self.clock.due(cx.state.source_read.len()) {
            return Ok(Decision::forced_read());
        }
        let pool = self.source.full_candidates(cx, self.beam_width)?;
        let vote = ralcp_vote(&pool, self.gamma, cx.committed());
        let pi = vote_pi(&vote);
        let tokens = trim_commit(vote.committed_prefix, false);
        let action = if tokens.is_empty() {
            Action::read(pi)
        } else {
            Action::write(tokens, pi)
        };
        Ok(Decision {
            action,
            candidates: pool.len(),
            pi,
        })
    }
}

/// Builds a plain (non-anticipating) policy.
pub fn build_plain_policy(cfg: &PolicyConfig) -> Result<Box<dyn Policy>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        PolicyKind::WaitKStrideN => Box::new(WaitKPolicy::new(cfg.k, cfg.n, PlainSource)),
        PolicyKind::LocalAgreement => Box::new(LocalAgreementPolicy::new(
            cfg.n,
            cfg.segment_size,
            PlainSource,
        )),
        PolicyKind::HoldN => Box::new(HoldNPolicy::new(cfg.n, cfg.segment_size)),
        PolicyKind::Ralcp => Box::new(RalcpPolicy::new(cfg.gamma, cfg.beam_width, PlainSource)),
        PolicyKind::Taf => {
            return Err(Error::Config(
                "the taf policy needs an anticipation config".into(),
            ))
        }
    })
}
