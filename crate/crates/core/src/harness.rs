//! Sentence-level simulation loop and corpus runner.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, convert_delays, Granularity, QualityLatencyPoint};
use crate::models::Models;
use crate::policies::{build_plain_policy, Policy, PolicyConfig, PolicyKind, StepContext};
use crate::stream::{tokenize, Action, StepRecord, StreamState, Token, Trajectory};
use crate::taf::{compose_with_base, step_seed, TafConfig};

/// Cap on the language-model context when earlier sentences are prepended.
pub const MAX_LM_CONTEXT: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub doc_id: String,
    pub index: usize,
    pub source: String,
    pub reference: String,
}

/// Line-aligned sources and references grouped into documents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentCorpus {
    sentences: Vec<SentenceRecord>,
    position: HashMap<(String, usize), usize>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

impl DocumentCorpus {
    pub fn new(sentences: Vec<SentenceRecord>) -> Result<Self> {
        let mut position = HashMap::new();
        let mut next: HashMap<&str, usize> = HashMap::new();
        for (i, s) in sentences.iter().enumerate() {
            let expected = next.entry(s.doc_id.as_str()).or_insert(0);
            if s.index != *expected {
                return Err(Error::Inconsistent(format!(
                    "document {:?}: sentence index {} where {} was expected",
                    s.doc_id, s.index, expected
                )));
            }
            *expected += 1;
            position.insert((s.doc_id.clone(), s.index), i);
        }
        Ok(DocumentCorpus {
            sentences,
            position,
        })
    }

    /// Every line its own single-sentence document.
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Self {
        let sentences = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (source, reference))| SentenceRecord {
                doc_id: format!("line{}", i + 1),
                index: 0,
                source,
                reference,
            })
            .collect();
        Self::new(sentences).expect("single-sentence documents are contiguous")
    }

    /// Loads line-aligned files. The optional doc-id file holds
    /// `line_number<TAB>doc_id<TAB>sentence_index` with 1-based line numbers.
    pub fn load(source: &Path, reference: &Path, docids: Option<&Path>) -> Result<Self> {
        let src = read_lines(source)?;
        let refs = read_lines(reference)?;
        if src.len() != refs.len() {
            return Err(Error::Parse {
                path: reference.to_path_buf(),
                message: format!(
                    "{} reference lines for {} source lines",
                    refs.len(),
                    src.len()
                ),
            });
        }
        let Some(docids) = docids else {
            return Ok(Self::from_pairs(src.into_iter().zip(refs).collect()));
        };
        let mut ids: Vec<Option<(String, usize)>> = vec![None; src.len()];
        for (n, line) in read_lines(docids)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                path: docids.to_path_buf(),
                message: format!("line {}: {m}", n + 1),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [num, doc, idx] = fields[..] else {
                return Err(bad("expected line_number<TAB>doc_id<TAB>sentence_index"));
            };
            let num: usize = num.trim().parse().map_err(|_| bad("bad line number"))?;
            let idx: usize = idx.trim().parse().map_err(|_| bad("bad sentence index"))?;
            let slot = num
                .checked_sub(1)
                .and_then(|i| ids.get_mut(i))
                .ok_or_else(|| bad("line number out of range"))?;
            if slot.is_some() {
                return Err(bad("duplicate line number"));
            }
            *slot = Some((doc.trim().to_string(), idx));
        }
        let sentences = src
            .into_iter()
            .zip(refs)
            .zip(ids)
            .enumerate()
            .map(|(i, ((source, reference), id))| {
                let (doc_id, index) = id.ok_or_else(|| Error::Parse {
                    path: docids.to_path_buf(),
                    message: format!("no document id for line {}", i + 1),
                })?;
                Ok(SentenceRecord {
                    doc_id,
                    index,
                    source,
                    reference,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sentences).map_err(|e| Error::Parse {
            path: docids.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.sentences
    }

    pub fn get(&self, doc_id: &str, index: usize) -> Option<&SentenceRecord> {
        self.position
            .get(&(doc_id.to_string(), index))
            .map(|&i| &self.sentences[i])
    }

    /// Full source sentences preceding `index` in `doc_id`, oldest first.
    pub fn history(&self, doc_id: &str, index: usize) -> Result<Vec<Vec<Token>>> {
        if self.get(doc_id, index).is_none() {
            return Err(Error::Lookup(format!(
                "no sentence {index} in document {doc_id:?}"
            )));
        }
        Ok((0..index)
            .map(|k| tokenize(&self.get(doc_id, k).expect("indices are contiguous").source))
            .collect())
    }
}

/// Prepends earlier sentences to the current prefix, each framed as
/// `<s> .. </s>`; the current sentence starts with `<s>`. Oldest sentences
/// are dropped first to stay within [`MAX_LM_CONTEXT`] tokens.
pub fn lm_context_from_history(history: &[Vec<Token>], current_prefix: &[Token]) -> Vec<Token> {
    let mut budget = MAX_LM_CONTEXT.saturating_sub(current_prefix.len() + 1);
    let mut kept = 0;
    for sentence in history.iter().rev() {
        let cost = sentence.len() + 2;
        if cost > budget {
            break;
        }
        budget -= cost;
        kept += 1;
    }
    let mut ctx = Vec::new();
    for sentence in &history[history.len() - kept..] {
        ctx.push(Token::bos());
        ctx.extend(sentence.iter().cloned());
        ctx.push(Token::eos());
    }
    ctx.push(Token::bos());
    ctx.extend(current_prefix.iter().cloned());
    ctx
}

/// LM context for a prefix of sentence `sentence_index` in `doc_id`.
pub fn build_lm_context(
    corpus: &DocumentCorpus,
    doc_id: &str,
    sentence_index: usize,
    current_prefix: &[Token],
) -> Result<Vec<Token>> {
    Ok(lm_context_from_history(
        &corpus.history(doc_id, sentence_index)?,
        current_prefix,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    pub taf: Option<TafConfig>,
    pub granularity: Granularity,
    /// Hypotheses are cut at this multiple of the source length.
    pub max_target_factor: f64,
    pub global_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            policy: PolicyConfig::default(),
            taf: None,
            granularity: Granularity::Word,
            max_target_factor: 1.5,
            global_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_target_factor >= 1.0) {
            return Err(Error::Config(format!(
                "max_target_factor must be >= 1, got {}",
                self.max_target_factor
            )));
        }
        if self.policy.kind == PolicyKind::Taf && self.taf.is_none() {
            return Err(Error::Config(
                "the taf policy needs an anticipation config".into(),
            ));
        }
        self.policy.validate()?;
        if let Some(taf) = &self.taf {
            taf.validate()?;
            if self.policy.kind == PolicyKind::HoldN {
                return Err(Error::Config(
                    "Hold-N cannot be combined with anticipation".into(),
                ));
            }
            if self.policy.kind == PolicyKind::Ralcp && taf.pool_size() != self.policy.beam_width {
                return Err(Error::Config(format!(
                    "n * beam_per_continuation = {} must equal the RALCP beam width {}",
                    taf.pool_size(),
                    self.policy.beam_width
                )));
            }
        }
        Ok(())
    }

    /// Fresh per-sentence policy instance.
    pub fn build_policy(&self) -> Result<Box<dyn Policy>> {
        self.validate()?;
        match &self.taf {
            Some(taf) => compose_with_base(&self.policy, taf),
            None => build_plain_policy(&self.policy),
        }
    }

    /// Policy name as used on the command line (`ralcp+taf`, `waitk`, ...).
    pub fn policy_name(&self) -> String {
        match (&self.taf, self.policy.kind) {
            (Some(_), k) if k != PolicyKind::Taf => format!("{}+taf", k.name()),
            (_, k) => k.name().to_string(),
        }
    }

    /// Compact identifier of the configuration.
    pub fn config_id(&self) -> String {
        let p = &self.policy;
        let mut id = format!("{}-K{}-N{}-g{}", self.policy_name(), p.k, p.n, p.gamma);
        if p.kind == PolicyKind::Ralcp {
            id.push_str(&format!("-b{}", p.beam_width));
        }
        if matches!(p.kind, PolicyKind::LocalAgreement | PolicyKind::HoldN) {
            id.push_str(&format!("-s{}", p.segment_size));
        }
        if let Some(t) = &self.taf {
            id.push_str(&format!("-tau{}-n{}-l{}-k{}", t.tau, t.n, t.l, t.k));
            if t.beam_per_continuation != 1 {
                id.push_str(&format!("-bc{}", t.beam_per_continuation));
            }
        }
        id
    }

    /// Whether any step samples from the language model.
    pub fn needs_lm(&self) -> bool {
        self.taf.as_ref().is_some_and(|t| t.l > 0)
    }

    pub fn max_target_len(&self, source_len: usize) -> usize {
        (self.max_target_factor * source_len as f64).ceil() as usize
    }

    fn seed_base(&self) -> u64 {
        let taf_seed = self.taf.as_ref().map_or(0, |t| t.seed);
        self.global_seed ^ taf_seed.rotate_left(32)
    }
}

/// Runs one sentence to completion. `history` holds earlier sentences of
/// the same document for the LM context; the translator only ever sees the
/// current sentence.
pub fn simulate_sentence(
    models: &Models,
    policy: &mut dyn Policy,
    source: &[Token],
    history: &[Vec<Token>],
    sentence_id: u64,
    run: &RunConfig,
) -> Result<Trajectory> {
    if source.is_empty() {
        return Err(Error::Precondition("empty source sentence".into()));
    }
    if source.iter().any(|t| t.is_eos) {
        return Err(Error::Precondition(
            "source contains the end-of-sentence token".into(),
        ));
    }
    let max_target_len = run.max_target_len(source.len());
    let budget = source.len() + max_target_len + 2;
    let eos = Token::eos();
    let mut state = StreamState::new();
    let mut traj = Trajectory {
        sentence_id,
        ..Default::default()
    };

    for step in 0.. {
        if state.target_finished {
            break;
        }
        if state.hypothesis.len() >= max_target_len {
            traj.truncated = true;
            break;
        }
        if step >= budget {
            return Err(Error::StepBudget(step));
        }
        let lm_context = lm_context_from_history(history, &state.source_read);
        let cx = StepContext {
            state: &state,
            lm_context: &lm_context,
            models,
            step_seed: step_seed(run.seed_base(), sentence_id, step),
            max_target_len,
        };
        let decision = policy.decide(&cx)?;
        let mut action: Action = decision.action;
        if action.is_read() && state.source_exhausted {
            return Err(Error::Inconsistent(
                "policy read past the end of the source".into(),
            ));
        }
        if action.is_write() {
            let room = max_target_len - state.hypothesis.len();
            let words = action.tokens.iter().filter(|t| !t.is_eos).count();
            if words > room {
                action.tokens.truncate(room);
            }
        }
        let next = if action.is_read() {
            Some(source.get(state.source_read.len()).unwrap_or(&eos))
        } else {
            None
        };
        state.apply(&action, next)?;
        traj.step_log.push(StepRecord {
            step,
            source_read: state.source_read.len(),
            candidates: decision.candidates,
            pi: decision.pi,
            committed: action.tokens.clone(),
        });
        traj.actions.push(action);
    }

    traj.final_hypothesis = state.hypothesis;
    traj.delays = state.delays;
    traj.verify_replay(source)?;
    Ok(traj)
}

/// Models plus a run configuration, simulating one sentence at a time.
pub struct Engine {
    pub models: Models,
    pub run: RunConfig,
}

impl Engine {
    pub fn new(models: Models, run: RunConfig) -> Result<Self> {
        run.validate()?;
        Ok(Engine { models, run })
    }

    pub fn simulate(&self, source: &str, sentence_id: u64) -> Result<Trajectory> {
        let mut policy = self.run.build_policy()?;
        simulate_sentence(
            &self.models,
            policy.as_mut(),
            &tokenize(source),
            &[],
            sentence_id,
            &self.run,
        )
    }
}

/// Per-sentence result of a corpus run.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceResult {
    pub trajectory: Trajectory,
    pub hypothesis_text: String,
    pub laal: f64,
    pub al: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRun {
    pub sentences: Vec<SentenceResult>,
    pub point: QualityLatencyPoint,
}

impl CorpusRun {
    pub fn trajectories_jsonl(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.trajectory.to_json_line() + "\n")
            .collect()
    }
}

/// Lagging of one sentence in evaluation units. A sentence that produced no
/// output counts as lagging by the full source length.
pub fn sentence_lagging(
    traj: &Trajectory,
    source: &str,
    reference: &str,
    granularity: Granularity,
) -> Result<(f64, f64)> {
    let units = convert_delays(traj, source, reference, granularity)?;
    if units.hyp_len == 0 {
        let full = units.source_len as f64;
        return Ok((full, full));
    }
    Ok((metrics::laal(&units)?, metrics::average_lagging(&units)?))
}

/// Simulates every sentence (in parallel on the current rayon pool) and
/// aggregates corpus BLEU and mean LAAL/AL. Output order follows the corpus.
pub fn run_corpus(corpus: &DocumentCorpus, models: &Models, run: &RunConfig) -> Result<CorpusRun> {
    if corpus.is_empty() {
        return Err(Error::Precondition("empty corpus".into()));
    }
    run.validate()?;
    let document_context = run.taf.as_ref().is_some_and(|t| t.use_document_context);

    let sentences = corpus
        .sentences()
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let source = tokenize(&rec.source);
            let history = if document_context {
                corpus.history(&rec.doc_id, rec.index)?
            } else {
                Vec::new()
            };
            let mut policy = run.build_policy()?;
            let trajectory =
                simulate_sentence(models, policy.as_mut(), &source, &history, i as u64, run)?;
            let (laal, al) =
                sentence_lagging(&trajectory, &rec.source, &rec.reference, run.granularity)?;
            Ok(SentenceResult {
                hypothesis_text: metrics::hypothesis_text(&trajectory.final_hypothesis),
                trajectory,
                laal,
                al,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let hyps: Vec<String> = sentences
        .iter()
        .map(|s| s.hypothesis_text.clone())
        .collect();
    let refs: Vec<String> = corpus
        .sentences()
        .iter()
        .map(|s| s.reference.clone())
        .collect();
    let count = sentences.len() as f64;
    let point = QualityLatencyPoint {
        config_id: run.config_id(),
        bleu: metrics::corpus_bleu(&hyps, &refs, run.granularity)?,
        laal: sentences.iter().map(|s| s.laal).sum::<f64>() / count,
        al: sentences.iter().map(|s| s.al).sum::<f64>() / count,
    };
    Ok(CorpusRun { sentences, point })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LexiconTranslator;
    use std::sync::Arc;

    fn copy_models() -> Models {
        Models::new(Arc::new(LexiconTranslator::copy()))
    }

    fn waitk(k: usize) -> RunConfig {
        RunConfig {
            policy: PolicyConfig {
                kind: PolicyKind::WaitKStrideN,
                k,
                n: 1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn copy_wait1_reproduces_source() {
        let run = waitk(1);
        let src = tokenize("a b c d");
        let mut policy = run.build_policy().unwrap();
        let t = simulate_sentence(&copy_models(), policy.as_mut(), &src, &[], 0, &run).unwrap();
        assert_eq!(t.final_hypothesis, src);
        assert_eq!(t.delays, vec![1, 2, 3, 4]);
        assert_eq!(t.read_count(), src.len() + 1);
        assert!(!t.truncated);
    }

    #[test]
    fn copy_corpus_bleu_is_one() {
        let corpus = DocumentCorpus::from_pairs(vec![
            ("a b c d e".into(), "a b c d e".into()),
            ("f g h i j k".into(), "f g h i j k".into()),
        ]);
        let out = run_corpus(&corpus, &copy_models(), &waitk(2)).unwrap();
        assert_eq!(out.point.bleu, 1.0);
        let mean = out.sentences.iter().map(|s| s.laal).sum::<f64>() / 2.0;
        assert_eq!(out.point.laal, mean);
    }

    #[test]
    fn context_prepends_document_history() {
        let corpus = DocumentCorpus::new(vec![
            SentenceRecord {
                doc_id: "d".into(),
                index: 0,
                source: "a b".into(),
                reference: "x".into(),
            },
            SentenceRecord {
                doc_id: "d".into(),
                index: 1,
                source: "c d".into(),
                reference: "y".into(),
            },
        ])
        .unwrap();
        let p = tokenize("c");
        assert_eq!(
            build_lm_context(&corpus, "d", 0, &p).unwrap(),
            [vec![Token::bos()], p.clone()].concat()
        );
        let ctx = build_lm_context(&corpus, "d", 1, &p).unwrap();
        assert_eq!(
            ctx,
            [
                vec![Token::bos()],
                tokenize("a b"),
                vec![Token::eos(), Token::bos()],
                p
            ]
            .concat()
        );
        assert!(matches!(
            build_lm_context(&corpus, "d", 5, &[]),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn context_cap_drops_oldest_sentences() {
        let long: Vec<Token> = (0..300).map(|i| Token::word(format!("w{i}"))).collect();
        let history = vec![long.clone(), long.clone()];
        let ctx = lm_context_from_history(&history, &tokenize("p"));
        assert_eq!(ctx.len(), 302 + 2);
        assert!(ctx.len() <= MAX_LM_CONTEXT);
    }

    #[test]
    fn non_contiguous_indices_rejected() {
        let r = DocumentCorpus::new(vec![SentenceRecord {
            doc_id: "d".into(),
            index: 1,
            source: "a".into(),
            reference: "a".into(),
        }]);
        assert!(r.is_err());
    }

    #[test]
    fn docids_file() {
        let dir = tempfile::tempdir().unwrap();
        let w = |name: &str, text: &str| {
            let p = dir.path().join(name);
            std::fs::write(&p, text).unwrap();
            p
        };
        let s = w("s", "a\nb\nc\n");
        let r = w("r", "A\nB\nC\n");
        let d = w("d", "1\tx\t0\n2\ty\t0\n3\tx\t1\n");
        let c = DocumentCorpus::load(&s, &r, Some(&d)).unwrap();
        assert_eq!(c.get("x", 1).unwrap().source, "c");
        let bad = w("bad", "1\tx\t0\n");
        assert!(matches!(
            DocumentCorpus::load(&s, &r, Some(&bad)),
            Err(Error::Parse { .. })
        ));
        let short = w("short", "A\n");
        assert!(DocumentCorpus::load(&s, &short, None).is_err());
        assert!(matches!(
            DocumentCorpus::load(&dir.path().join("none"), &r, None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn config_ids_are_distinct() {
        let a = waitk(3).config_id();
        let b = waitk(4).config_id();
        assert_ne!(a, b);
        let mut t = waitk(3);
        t.policy.kind = PolicyKind::Ralcp;
        t.taf = Some(TafConfig {
            n: 4,
            ..Default::default()
        });
        assert_eq!(t.policy_name(), "ralcp+taf");
    }
}
