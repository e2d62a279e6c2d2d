//! HTTP client for the model bridge protocol.
//!
//! Payloads carry whitespace-joined surface text; each side tokenizes with
//! its own vocabulary. `</s>` at the end of a continuation marks that the LM
//! produced end-of-sentence.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    Continuation, LanguageModel, NextTokenDistribution, SamplingParams, ScoredHypothesis,
    Translator,
};
use crate::error::{Error, Result};
use crate::stream::{detokenize, tokenize, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationsRequest {
    pub request_id: String,
    pub context: String,
    pub n: usize,
    pub max_len: usize,
    pub top_k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationsResponse {
    pub request_id: String,
    pub continuations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub request_id: String,
    pub source: String,
    pub target_prefix: String,
    pub beam: usize,
    pub max_len: usize,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub tokens: Vec<String>,
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub request_id: String,
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
}

/// Plain text of an LM context: sentence boundary markers are dropped, so
/// earlier sentences and the current prefix are simply space-joined.
pub fn context_text(context: &[Token]) -> String {
    let words: Vec<Token> = context
        .iter()
        .filter(|t| !t.is_eos && !t.is_bos())
        .cloned()
        .collect();
    detokenize(&words)
}

/// Renders a continuation for the wire.
pub fn continuation_to_text(c: &Continuation) -> String {
    detokenize(&c.source_suffix())
}

/// Parses a continuation from the wire, dropping anything after `</s>`.
pub fn continuation_from_text(text: &str, max_len: usize) -> Continuation {
    let mut cont = Continuation::default();
    for tok in tokenize(text) {
        if tok.is_eos {
            cont.truncated_at_eos = true;
            break;
        }
        if cont.tokens.len() == max_len {
            break;
        }
        cont.tokens.push(tok);
    }
    cont
}

impl From<&ScoredHypothesis> for WireCandidate {
    fn from(h: &ScoredHypothesis) -> Self {
        WireCandidate {
            tokens: h.tokens.iter().map(|t| t.surface.clone()).collect(),
            log_score: h.log_score,
        }
    }
}

impl From<WireCandidate> for ScoredHypothesis {
    fn from(c: WireCandidate) -> Self {
        ScoredHypothesis {
            tokens: c.tokens.into_iter().map(Token::word).collect(),
            log_score: c.log_score,
        }
    }
}

struct Client {
    base_url: String,
    agent: ureq::Agent,
    counter: AtomicU64,
}

impl Client {
    fn new(base_url: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Client {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            counter: AtomicU64::new(0),
        }
    }

    fn next_id(&self) -> String {
        format!("req-{}", self.counter.fetch_add(1, Ordering::Relaxed))
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp> {
        let url = format!("{}{path}", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| Error::Model(format!("POST {url}: {e}")))?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| Error::Model(format!("POST {url}: bad response body: {e}")))
    }

    fn health(&self) -> Result<HealthResponse> {
        let url = format!("{}/v1/health", self.base_url);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::Model(format!("GET {url}: {e}")))?;
        resp.body_mut()
            .read_json()
            .map_err(|e| Error::Model(format!("GET {url}: {e}")))
    }
}

fn check_echo(sent: &str, got: &str) -> Result<()> {
    if sent != got {
        return Err(Error::Model(format!(
            "response id {got:?} does not echo request {sent:?}"
        )));
    }
    Ok(())
}

/// Language model served over the bridge. Only continuation sampling is
/// available remotely; temperature is left to the server.
pub struct RemoteLanguageModel {
    client: Client,
}

impl RemoteLanguageModel {
    pub fn new(base_url: &str) -> Self {
        RemoteLanguageModel {
            client: Client::new(base_url),
        }
    }

    pub fn health(&self) -> Result<HealthResponse> {
        self.client.health()
    }
}

impl LanguageModel for RemoteLanguageModel {
    fn next_distribution(&self, _context: &[Token]) -> Result<NextTokenDistribution> {
        Err(Error::Model(
            "remote language model only supports continuation sampling".into(),
        ))
    }

    fn sample_continuations(
        &self,
        context: &[Token],
        params: &SamplingParams,
        seed: u64,
    ) -> Result<Vec<Continuation>> {
        params.validate()?;
        let req = ContinuationsRequest {
            request_id: self.client.next_id(),
            context: context_text(context),
            n: params.n,
            max_len: params.max_len,
            top_k: params.top_k,
            seed,
        };
        let resp: ContinuationsResponse = self.client.post("/v1/continuations", &req)?;
        check_echo(&req.request_id, &resp.request_id)?;
        if resp.continuations.len() != params.n {
            return Err(Error::Model(format!(
                "asked for {} continuations, got {}",
                params.n,
                resp.continuations.len()
            )));
        }
        Ok(resp
            .continuations
            .iter()
            .map(|c| continuation_from_text(c, params.max_len))
            .collect())
    }
}

/// Translator served over the bridge; every query is a beam search.
pub struct RemoteTranslator {
    client: Client,
}

impl RemoteTranslator {
    pub fn new(base_url: &str) -> Self {
        RemoteTranslator {
            client: Client::new(base_url),
        }
    }

    pub fn health(&self) -> Result<HealthResponse> {
        self.client.health()
    }
}

impl Translator for RemoteTranslator {
    fn next_distribution(
        &self,
        _source: &[Token],
        _prefix: &[Token],
    ) -> Result<NextTokenDistribution> {
        Err(Error::Model(
            "remote translator only supports candidate generation".into(),
        ))
    }

    fn beam_search(
        &self,
        source: &[Token],
        target_prefix: &[Token],
        beam_width: usize,
        max_len: usize,
    ) -> Result<Vec<ScoredHypothesis>> {
        let req = TranslateRequest {
            request_id: self.client.next_id(),
            source: detokenize(source),
            target_prefix: detokenize(target_prefix),
            beam: beam_width,
            max_len,
            mode: "candidates".to_string(),
        };
        let resp: TranslateResponse = self.client.post("/v1/translate", &req)?;
        check_echo(&req.request_id, &resp.request_id)?;
        let hyps: Vec<ScoredHypothesis> = resp.candidates.into_iter().map(Into::into).collect();
        if let Some(bad) = hyps.iter().find(|h| !h.tokens.starts_with(target_prefix)) {
            return Err(Error::Model(format!(
                "candidate {:?} does not extend the target prefix",
                detokenize(&bad.tokens)
            )));
        }
        Ok(hyps)
    }
}
