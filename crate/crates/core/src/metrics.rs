//! Quality and latency metrics: corpus BLEU, Average Lagging and
//! Length-Adaptive Average Lagging, and conversion of token-level delays into
//! word or character evaluation units.
//!
//! Tokens ending in `@@` continue into the next token of the same word.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{Token, Trajectory};

/// Subword continuation marker.
pub const CONTINUATION: &str = "@@";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Word,
    Character,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "word" => Ok(Granularity::Word),
            "character" | "char" => Ok(Granularity::Character),
            other => Err(Error::Config(format!("unknown granularity {other:?}"))),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Word => "word",
            Granularity::Character => "character",
        })
    }
}

/// Delays of one hypothesis expressed in evaluation units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalUnits {
    pub granularity: Granularity,
    pub source_len: usize,
    pub hyp_delays: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl EvalUnits {
    pub fn new(
        granularity: Granularity,
        source_len: usize,
        hyp_delays: Vec<usize>,
        ref_len: usize,
    ) -> Result<Self> {
        if let Some(d) = hyp_delays.iter().find(|&&d| d > source_len) {
            return Err(Error::Inconsistent(format!(
                "delay {d} exceeds source length {source_len}"
            )));
        }
        Ok(EvalUnits {
            granularity,
            source_len,
            hyp_len: hyp_delays.len(),
            hyp_delays,
            ref_len,
        })
    }
}

fn strip_marker(s: &str) -> (&str, bool) {
    match s.strip_suffix(CONTINUATION) {
        Some(stem) => (stem, true),
        None => (s, false),
    }
}

/// Joins `@@`-continued tokens into words. A trailing continuation closes
/// the last word.
pub fn merge_subwords<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for t in tokens {
        let (stem, cont) = strip_marker(t.as_ref());
        cur.push_str(stem);
        if !cont && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Evaluation units of a text: words (after subword merging) or the
/// non-whitespace characters of those words.
pub fn eval_units(text: &str, granularity: Granularity) -> Vec<String> {
    let words = merge_subwords(&text.split_whitespace().collect::<Vec<_>>());
    match granularity {
        Granularity::Word => words,
        Granularity::Character => words
            .iter()
            .flat_map(|w| w.chars().map(String::from))
            .collect(),
    }
}

/// For each source-token prefix length `d`, how many source units it touches.
fn source_unit_offsets(source: &[&str], granularity: Granularity) -> Result<Vec<usize>> {
    let mut offsets = Vec::with_capacity(source.len() + 1);
    offsets.push(0);
    let mut closed = 0usize;
    let mut chars = 0usize;
    for tok in source {
        let (stem, cont) = strip_marker(tok);
        match granularity {
            Granularity::Word => {
                if !cont {
                    closed += 1;
                }
                offsets.push(closed + usize::from(cont));
            }
            Granularity::Character => {
                if stem.is_empty() {
                    return Err(Error::Alignment(format!(
                        "source token {tok:?} has no characters"
                    )));
                }
                chars += stem.chars().count();
                offsets.push(chars);
            }
        }
    }
    Ok(offsets)
}

/// Re-expresses a trajectory's token delays in evaluation units.
///
/// Word units: an output word takes the delay of its last token. Character
/// units: every character inherits the delay of the token it belongs to.
/// Source delays are converted to the number of source units touched by
/// the tokens read.
pub fn convert_delays(
    traj: &Trajectory,
    source_text: &str,
    reference_text: &str,
    granularity: Granularity,
) -> Result<EvalUnits> {
    let source: Vec<&str> = source_text.split_whitespace().collect();
    if traj.final_hypothesis.len() != traj.delays.len() {
        return Err(Error::Alignment(format!(
            "{} hypothesis tokens but {} delays",
            traj.final_hypothesis.len(),
            traj.delays.len()
        )));
    }
    if let Some(&d) = traj.delays.iter().max() {
        if d > source.len() {
            return Err(Error::Alignment(format!(
                "delay {d} exceeds the {} tokens of the source text",
                source.len()
            )));
        }
    }
    let offsets = source_unit_offsets(&source, granularity)?;
    let source_len = *offsets.last().unwrap_or(&0);

    let mut delays = Vec::new();
    let mut pending = false;
    for (tok, &d) in traj.final_hypothesis.iter().zip(&traj.delays) {
        if tok.is_eos {
            return Err(Error::Alignment("EOS inside a hypothesis".into()));
        }
        let (stem, cont) = strip_marker(tok.as_str());
        let unit_delay = offsets[d];
        match granularity {
            Granularity::Word => {
                if cont {
                    pending = true;
                } else {
                    delays.push(unit_delay);
                    pending = false;
                }
            }
            Granularity::Character => {
                if stem.is_empty() {
                    return Err(Error::Alignment(format!(
                        "output token {tok} has no characters"
                    )));
                }
                delays.extend(std::iter::repeat_n(unit_delay, stem.chars().count()));
            }
        }
    }
    if pending {
        let last = traj.delays.last().copied().unwrap_or(0);
        delays.push(offsets[last]);
    }
    let ref_len = eval_units(reference_text, granularity).len();
    EvalUnits::new(granularity, source_len, delays, ref_len)
}

fn lagging(units: &EvalUnits, rate_len: usize) -> Result<f64> {
    if units.hyp_len == 0 || units.hyp_delays.is_empty() {
        return Err(Error::UndefinedMetric(
            "lagging of an empty hypothesis".into(),
        ));
    }
    if units.source_len == 0 {
        return Err(Error::UndefinedMetric("lagging of an empty source".into()));
    }
    let rate = rate_len as f64 / units.source_len as f64;
    let cutoff = units
        .hyp_delays
        .iter()
        .position(|&d| d >= units.source_len)
        .map_or(units.hyp_delays.len(), |i| i + 1);
    let sum: f64 = units.hyp_delays[..cutoff]
        .iter()
        .enumerate()
        .map(|(i, &d)| d as f64 - i as f64 / rate)
        .sum();
    Ok(sum / cutoff as f64)
}

/// Length-adaptive average lagging: the ideal rate uses the longer of the
/// hypothesis and the reference.
pub fn laal(units: &EvalUnits) -> Result<f64> {
    lagging(units, units.hyp_len.max(units.ref_len))
}

/// Average lagging with the rate taken from the hypothesis length.
pub fn average_lagging(units: &EvalUnits) -> Result<f64> {
    lagging(units, units.hyp_len)
}

fn ngram_counts<S: AsRef<str> + Eq + std::hash::Hash>(
    tokens: &[S],
    n: usize,
) -> HashMap<&[S], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the number of hypothesis n-grams.
pub fn modified_precision<S: AsRef<str> + Eq + std::hash::Hash>(
    hyp: &[S],
    reference: &[S],
    n: usize,
) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

/// Corpus-level BLEU without smoothing, in `[0, 1]`.
pub fn bleu<S: AsRef<str> + Eq + std::hash::Hash>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    max_ngram: usize,
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Config("empty reference corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Inconsistent(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_ngram == 0 {
        return Err(Error::Config("max n-gram order must be >= 1".into()));
    }
    let mut matched = vec![0usize; max_ngram];
    let mut total = vec![0usize; max_ngram];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_ngram {
            let (m, t) = modified_precision(h, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if hyp_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_precision: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / max_ngram as f64;
    let brevity = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0);
    Ok((log_precision + brevity).exp().clamp(0.0, 1.0))
}

/// Corpus BLEU-4 on raw text lines in the given units.
pub fn corpus_bleu(
    hypotheses: &[String],
    references: &[String],
    granularity: Granularity,
) -> Result<f64> {
    let h: Vec<Vec<String>> = hypotheses
        .iter()
        .map(|t| eval_units(t, granularity))
        .collect();
    let r: Vec<Vec<String>> = references
        .iter()
        .map(|t| eval_units(t, granularity))
        .collect();
    bleu(&h, &r, 4)
}

/// Surface text of a token sequence.
pub fn hypothesis_text(tokens: &[Token]) -> String {
    crate::stream::detokenize(tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityLatencyPoint {
    pub config_id: String,
    pub bleu: f64,
    pub laal: f64,
    pub al: f64,
}

/// One line of the metrics CSV. Anticipation columns are empty for plain
/// policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config_id: String,
    pub policy: String,
    pub tau: Option<f64>,
    #[serde(rename = "K")]
    pub k_wait: usize,
    #[serde(rename = "N")]
    pub n_stride: usize,
    pub gamma: f64,
    pub n: Option<usize>,
    pub l: Option<usize>,
    pub k: Option<usize>,
    pub bleu: f64,
    pub al: f64,
    pub laal: f64,
}

pub const METRICS_HEADER: &str = "config_id,policy,tau,K,N,gamma,n,l,k,bleu,al,laal";

/// Serializes rows to CSV text with the fixed header.
pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Inconsistent(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Inconsistent(format!("csv: {e}")))?;
    let text = String::from_utf8(bytes).expect("csv output is utf-8");
    if rows.is_empty() {
        return Ok(format!("{METRICS_HEADER}\n"));
    }
    Ok(text)
}

/// Parses a metrics CSV.
pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Inconsistent(format!("csv: {e}"))))
        .collect()
}
