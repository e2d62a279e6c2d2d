use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Continuation, LanguageModel, NextTokenDistribution};
use crate::error::{Error, Result};
use crate::stream::Token;

/// Continuation sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// Number of continuations.
    pub n: usize,
    /// Maximum continuation length in tokens.
    pub max_len: usize,
    pub top_k: usize,
    pub temperature: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            n: 10,
            max_len: 10,
            top_k: 10,
            temperature: 1.0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Precondition("need at least one continuation".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Precondition("top-k must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Precondition("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Draws one token from the top-k renormalized distribution.
pub fn sample_top_k<R: Rng + ?Sized>(
    dist: &NextTokenDistribution,
    k: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Token> {
    let top = dist.top_k(k, temperature);
    if top.len() == 1 {
        return Ok(top[0].0.clone());
    }
    let index = WeightedIndex::new(top.iter().map(|(_, p)| *p))
        .map_err(|e| Error::Model(format!("cannot sample: {e}")))?;
    Ok(top[index.sample(rng)].0.clone())
}

/// Samples `n` continuations of at most `max_len` tokens, token by token,
/// stopping early at end-of-sentence. Identical inputs and seed give identical
/// output.
pub fn sample_continuations<M: LanguageModel + ?Sized>(
    lm: &M,
    context: &[Token],
    params: &SamplingParams,
    seed: u64,
) -> Result<Vec<Continuation>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(params.n);
    let mut ctx = context.to_vec();
    for _ in 0..params.n {
        ctx.truncate(context.len());
        let mut cont = Continuation::default();
        for _ in 0..params.max_len {
            let dist = lm.next_distribution(&ctx)?;
            let tok = sample_top_k(&dist, params.top_k, params.temperature, &mut rng)?;
            if tok.is_eos {
                cont.truncated_at_eos = true;
                break;
            }
            ctx.push(tok.clone());
            cont.tokens.push(tok);
        }
        out.push(cont);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(NextTokenDistribution);

    impl LanguageModel for Fixed {
        fn next_distribution(&self, _context: &[Token]) -> Result<NextTokenDistribution> {
            Ok(self.0.clone())
        }
    }

    fn dist() -> NextTokenDistribution {
        NextTokenDistribution::new([
            (Token::word("a"), 0.4),
            (Token::word("b"), 0.3),
            (Token::word("c"), 0.2),
            (Token::eos(), 0.1),
        ])
        .unwrap()
    }

    #[test]
    fn greedy_collapse_with_k1() {
        let lm = Fixed(dist());
        let params = SamplingParams {
            n: 5,
            max_len: 4,
            top_k: 1,
            temperature: 1.0,
        };
        let conts = sample_continuations(&lm, &[], &params, 3).unwrap();
        assert_eq!(conts.len(), 5);
        assert!(conts.iter().all(|c| c == &conts[0]));
        assert_eq!(conts[0].tokens.len(), 4);
    }

    #[test]
    fn zero_length_gives_empty_continuations() {
        let lm = Fixed(dist());
        let params = SamplingParams {
            n: 3,
            max_len: 0,
            top_k: 10,
            temperature: 1.0,
        };
        let conts = sample_continuations(&lm, &[], &params, 3).unwrap();
        assert_eq!(conts.len(), 3);
        assert!(conts
            .iter()
            .all(|c| c.tokens.is_empty() && !c.truncated_at_eos));
    }

    #[test]
    fn same_seed_same_output() {
        let lm = Fixed(dist());
        let params = SamplingParams::default();
        let a = sample_continuations(&lm, &[], &params, 42).unwrap();
        let b = sample_continuations(&lm, &[], &params, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn continuations_stop_at_eos() {
        let lm = Fixed(dist());
        let params = SamplingParams {
            n: 50,
            max_len: 10,
            top_k: 10,
            temperature: 1.0,
        };
        for c in sample_continuations(&lm, &[], &params, 1).unwrap() {
            assert!(c.tokens.iter().all(|t| !t.is_eos));
            if c.tokens.len() < 10 {
                assert!(c.truncated_at_eos);
            }
        }
    }

    #[test]
    fn invalid_params() {
        let lm = Fixed(dist());
        let bad = SamplingParams {
            n: 0,
            ..Default::default()
        };
        assert!(sample_continuations(&lm, &[], &bad, 0).is_err());
        let bad = SamplingParams {
            top_k: 0,
            ..Default::default()
        };
        assert!(sample_continuations(&lm, &[], &bad, 0).is_err());
    }

    #[test]
    fn default_sampling_parameters() {
        let p = SamplingParams::default();
        assert_eq!((p.n, p.max_len, p.top_k), (10, 10, 10));
    }
}
