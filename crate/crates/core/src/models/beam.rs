use std::cmp::Ordering;

use super::{ScoredHypothesis, Translator};
use crate::error::{Error, Result};
use crate::stream::Token;

fn rank(a: &ScoredHypothesis, b: &ScoredHypothesis) -> Ordering {
    b.log_score
        .total_cmp(&a.log_score)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search constrained to extend `target_prefix`.
///
/// At every step all live hypotheses are expanded with every token of nonzero
/// probability and the best `beam_width` expansions survive; those ending in
/// EOS move to the finished pool. Search stops once no live hypothesis can
/// still enter the top `beam_width` finished ones, or when `max_len` is
/// reached (unfinished hypotheses are then returned as they are).
pub fn beam_search<T: Translator + ?Sized>(
    mt: &T,
    source: &[Token],
    target_prefix: &[Token],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<ScoredHypothesis>> {
    if beam_width == 0 {
        return Err(Error::Precondition("beam width must be at least 1".into()));
    }
    let start = ScoredHypothesis {
        tokens: target_prefix.to_vec(),
        log_score: 0.0,
    };
    if start.is_finished() {
        return Ok(vec![start]);
    }
    let mut live = vec![start];
    let mut finished: Vec<ScoredHypothesis> = Vec::new();

    while !live.is_empty() {
        if live[0].tokens.len() >= max_len {
            finished.append(&mut live);
            break;
        }
        let mut expansions = Vec::new();
        for hyp in &live {
            let dist = mt.next_distribution(source, &hyp.tokens)?;
            for (tok, p) in dist.iter() {
                if p <= 0.0 {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok.clone());
                expansions.push(ScoredHypothesis {
                    tokens,
                    log_score: hyp.log_score + p.ln(),
                });
            }
        }
        expansions.sort_by(rank);
        expansions.truncate(beam_width);
        live.clear();
        for hyp in expansions {
            if hyp.is_finished() {
                finished.push(hyp);
            } else {
                live.push(hyp);
            }
        }
        if finished.len() >= beam_width && !live.is_empty() {
            finished.sort_by(rank);
            finished.truncate(beam_width);
            let worst = finished[beam_width - 1].log_score;
            if live[0].log_score <= worst {
                break;
            }
        }
    }
    finished.sort_by(rank);
    finished.truncate(beam_width);
    Ok(finished)
}
