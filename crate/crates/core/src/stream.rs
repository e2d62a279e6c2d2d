//! Streaming translation state: tokens, READ/WRITE actions, delays and
//! complete per-sentence trajectories.
//!
//! Delays are counted in source tokens. The end of the source stream is a
//! sentinel token ([`Token::eos`]) delivered by an ordinary READ; reading it
//! marks the source exhausted without growing `source_read`, so every delay
//! stays within the real source length.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved surface form of the end-of-sentence / end-of-source token.
pub const EOS_SURFACE: &str = "</s>";
/// Reserved surface form of the sentence-start marker used in LM contexts.
pub const BOS_SURFACE: &str = "<s>";

/// A single source or target token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Token {
    pub surface: String,
    pub is_eos: bool,
}

impl Token {
    /// Builds a word token. Surfaces equal to `</s>` become the EOS token.
    pub fn word(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        if surface == EOS_SURFACE {
            return Self::eos();
        }
        debug_assert!(
            !surface.is_empty() && !surface.chars().any(char::is_whitespace),
            "bad token surface {surface:?}"
        );
        Token {
            surface,
            is_eos: false,
        }
    }

    /// Validating constructor.
    pub fn parse(surface: &str) -> Result<Self> {
        if surface.is_empty() {
            return Err(Error::Precondition("empty token surface".into()));
        }
        if surface.chars().any(char::is_whitespace) {
            return Err(Error::Precondition(format!(
                "token {surface:?} contains whitespace"
            )));
        }
        Ok(Self::word(surface))
    }

    pub fn eos() -> Self {
        Token {
            surface: EOS_SURFACE.to_string(),
            is_eos: true,
        }
    }

    pub fn bos() -> Self {
        Token {
            surface: BOS_SURFACE.to_string(),
            is_eos: false,
        }
    }

    pub fn is_bos(&self) -> bool {
        !self.is_eos && self.surface == BOS_SURFACE
    }

    pub fn as_str(&self) -> &str {
        &self.surface
    }
}

impl From<String> for Token {
    fn from(s: String) -> Self {
        Token::word(s)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token::word(s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> Self {
        t.surface
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// Whitespace tokenization.
pub fn tokenize(line: &str) -> Vec<Token> {
    line.split_whitespace().map(Token::word).collect()
}

/// Joins token surfaces with single spaces.
pub fn detokenize(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActionKind {
    Read,
    Write,
}

/// A policy decision. WRITE carries at least one token; READ carries none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub tokens: Vec<Token>,
    /// Write probability of the policy when it acted; 1.0 for rule-forced actions.
    pub confidence: f64,
}

impl Action {
    pub fn read(confidence: f64) -> Self {
        Action {
            kind: ActionKind::Read,
            tokens: Vec::new(),
            confidence,
        }
    }

    pub fn write(tokens: Vec<Token>, confidence: f64) -> Self {
        Action {
            kind: ActionKind::Write,
            tokens,
            confidence,
        }
    }

    pub fn is_read(&self) -> bool {
        self.kind == ActionKind::Read
    }

    pub fn is_write(&self) -> bool {
        self.kind == ActionKind::Write
    }
}

/// Partial source, committed hypothesis and per-token delays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamState {
    pub source_read: Vec<Token>,
    pub hypothesis: Vec<Token>,
    pub delays: Vec<usize>,
    pub source_exhausted: bool,
    /// Set once an EOS token has been written.
    pub target_finished: bool,
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Source as seen by a translator: the tokens read so far, followed by
    /// EOS once the stream is exhausted.
    pub fn translator_source(&self) -> Vec<Token> {
        let mut src = self.source_read.clone();
        if self.source_exhausted {
            src.push(Token::eos());
        }
        src
    }

    /// Applies an action in place.
    pub fn apply(&mut self, action: &Action, next_source: Option<&Token>) -> Result<()> {
        match action.kind {
            ActionKind::Read => {
                if !action.tokens.is_empty() {
                    return Err(Error::MalformedAction("READ carries tokens".into()));
                }
                if self.source_exhausted {
                    return Err(Error::Precondition("READ after source exhausted".into()));
                }
                let tok = next_source.ok_or_else(|| {
                    Error::Precondition("READ without a next source token".into())
                })?;
                if tok.is_eos {
                    self.source_exhausted = true;
                } else {
                    self.source_read.push(tok.clone());
                }
            }
            ActionKind::Write => {
                if action.tokens.is_empty() {
                    return Err(Error::MalformedAction("WRITE with no tokens".into()));
                }
                if self.target_finished {
                    return Err(Error::Precondition("WRITE after end of sentence".into()));
                }
                let last = action.tokens.len() - 1;
                if action.tokens[..last].iter().any(|t| t.is_eos) {
                    return Err(Error::MalformedAction(
                        "EOS must be the last token of a WRITE".into(),
                    ));
                }
                let delay = self.source_read.len();
                for tok in &action.tokens {
                    if tok.is_eos {
                        self.target_finished = true;
                    } else {
                        self.hypothesis.push(tok.clone());
                        self.delays.push(delay);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.delays.len() != self.hypothesis.len() {
            return Err(Error::Inconsistent(
                "delays/hypothesis length mismatch".into(),
            ));
        }
        if self.delays.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Inconsistent("delays decrease".into()));
        }
        if self.delays.iter().any(|&d| d > self.source_read.len()) {
            return Err(Error::Inconsistent("delay exceeds tokens read".into()));
        }
        Ok(())
    }
}

/// Pure state transition.
pub fn apply_action(
    state: &StreamState,
    action: &Action,
    next_source: Option<&Token>,
) -> Result<StreamState> {
    let mut next = state.clone();
    next.apply(action, next_source)?;
    Ok(next)
}

/// Per-step diagnostics recorded by the harness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub source_read: usize,
    pub candidates: usize,
    pub pi: f64,
    pub committed: Vec<Token>,
}

/// Complete record of one simulated sentence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub sentence_id: u64,
    pub actions: Vec<Action>,
    /// Committed target tokens, without the terminating EOS.
    pub final_hypothesis: Vec<Token>,
    pub delays: Vec<usize>,
    pub step_log: Vec<StepRecord>,
    /// The hypothesis hit the length guard before EOS was written.
    pub truncated: bool,
}

/// JSONL wire form of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub sentence_id: u64,
    pub actions: Vec<Action>,
    pub hypothesis: Vec<Token>,
    pub delays: Vec<usize>,
}

impl Trajectory {
    /// Folds the actions over an empty state, feeding `source` followed by the
    /// end-of-source sentinel to the READs.
    pub fn replay(&self, source: &[Token]) -> Result<StreamState> {
        let mut state = StreamState::new();
        let eos = Token::eos();
        let mut feed = source.iter().chain(std::iter::once(&eos));
        for action in &self.actions {
            let next = if action.is_read() { feed.next() } else { None };
            state.apply(action, next)?;
        }
        Ok(state)
    }

    /// Checks that replaying reproduces the recorded hypothesis and delays and
    /// that every prefix of the action sequence only extends the hypothesis.
    pub fn verify_replay(&self, source: &[Token]) -> Result<()> {
        let state = self.replay(source)?;
        state.check_invariants()?;
        if state.hypothesis != self.final_hypothesis || state.delays != self.delays {
            return Err(Error::Inconsistent(format!(
                "replay of sentence {} does not reproduce the trajectory",
                self.sentence_id
            )));
        }
        Ok(())
    }

    pub fn read_count(&self) -> usize {
        self.actions.iter().filter(|a| a.is_read()).count()
    }

    pub fn to_record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            sentence_id: self.sentence_id,
            actions: self.actions.clone(),
            hypothesis: self.final_hypothesis.clone(),
            delays: self.delays.clone(),
        }
    }

    pub fn from_record(rec: TrajectoryRecord) -> Self {
        Trajectory {
            sentence_id: rec.sentence_id,
            actions: rec.actions,
            final_hypothesis: rec.hypothesis,
            delays: rec.delays,
            step_log: Vec::new(),
            truncated: false,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("trajectory serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let rec: TrajectoryRecord = serde_json::from_str(line)
            .map_err(|e| Error::Inconsistent(format!("bad trajectory line: {e}")))?;
        Ok(Self::from_record(rec))
    }
}

/// Probability of a trajectory under the factorization
/// `P(y, g | x) = prod_i P_MT(y_i | x_{1:g_i}, y_{<i}) * pi(write) * prod (1 - pi(read))`.
///
/// Every READ is one decision step and every written token (EOS included) is
/// one decision step. `policy_probs[s]` is the write probability at step `s`;
/// READ steps contribute `1 - pi`, write steps `pi`. `mt_probs` holds one
/// probability per written token. Forced actions are expected to be passed as
/// `pi = 1` (forced write) or `pi = 0` (forced read).
pub fn trajectory_probability(
    traj: &Trajectory,
    mt_probs: &[f64],
    policy_probs: &[f64],
) -> Result<f64> {
    let writes: usize = traj
        .actions
        .iter()
        .filter(|a| a.is_write())
        .map(|a| a.tokens.len())
        .sum();
    let steps = writes + traj.read_count();
    if mt_probs.len() != writes {
        return Err(Error::Inconsistent(format!(
            "{} MT probabilities for {writes} written tokens",
            mt_probs.len()
        )));
    }
    if policy_probs.len() != steps {
        return Err(Error::Inconsistent(format!(
            "{} policy probabilities for {steps} decision steps",
            policy_probs.len()
        )));
    }
    if let Some(p) = mt_probs
        .iter()
        .chain(policy_probs)
        .find(|p| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::Precondition(format!(
            "probability {p} outside [0, 1]"
        )));
    }

    let mut prob = 1.0;
    let mut step = 0;
    let mut written = 0;
    for action in &traj.actions {
        match action.kind {
            ActionKind::Read => {
                prob *= 1.0 - policy_probs[step];
                step += 1;
            }
            ActionKind::Write => {
                for _ in &action.tokens {
                    prob *= policy_probs[step] * mt_probs[written];
                    step += 1;
                    written += 1;
                }
            }
        }
    }
    Ok(prob)
}
