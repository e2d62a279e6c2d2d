mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::*;
use simulstream::metrics::{self, EvalUnits, Granularity};
use simulstream::models::{beam_search, sample_top_k, NextTokenDistribution, ScoredHypothesis};
use simulstream::policies::{longest_common_prefix, ralcp_vote, trim_commit};
use simulstream::stream::{StreamState, Token, Trajectory};
use simulstream::taf::{aggregate_majority, policy_score};

fn source_of(len: usize) -> Vec<Token> {
    (0..len).map(|i| tok(&format!("s{i}"))).collect()
}

proptest! {
    #[test]
    fn replay_reproduces_recorded_state(seed in any::<u64>(), len in 1usize..8) {
        let source = source_of(len);
        let actions = random_actions(seed, len);
        let mut state = StreamState::new();
        let mut snapshots = vec![state.clone()];
        for a in &actions {
            let next = a.is_read().then(|| source.get(state.source_read.len()).cloned().unwrap_or_else(Token::eos));
            state.apply(a, next.as_ref()).unwrap();
            state.check_invariants().unwrap();
            snapshots.push(state.clone());
        }
        for w in snapshots.windows(2) {
            prop_assert!(w[1].hypothesis.starts_with(&w[0].hypothesis));
            prop_assert!(w[1].delays.starts_with(&w[0].delays));
        }
        prop_assert!(state.delays.windows(2).all(|d| d[0] <= d[1]));
        let traj = Trajectory {
            actions,
            final_hypothesis: state.hypothesis.clone(),
            delays: state.delays.clone(),
            ..Default::default()
        };
        let replayed = traj.replay(&source).unwrap();
        prop_assert_eq!(&replayed.hypothesis, &state.hypothesis);
        prop_assert_eq!(&replayed.delays, &state.delays);
        traj.verify_replay(&source).unwrap();
        let back = Trajectory::from_json_line(&traj.to_json_line()).unwrap();
        prop_assert_eq!(back.to_json_line(), traj.to_json_line());
    }

    #[test]
    fn trajectory_probability_normalizes(seed in any::<u64>()) {
        let total = micro_instance_total(seed);
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
    }

    #[test]
    fn beam_matches_exhaustive_enumeration(salt in any::<u64>(), width in 1usize..=15) {
        let mt = HashedTranslator { vocab: vec![tok("a"), tok("b")], salt };
        let source = toks("x y </s>");
        let all = enumerate_sequences(&mt, &source, 3);
        prop_assert_eq!(all.len(), 15);
        let beam = beam_search(&mt, &source, &[], 15, 3).unwrap();
        prop_assert_eq!(&beam, &all);
        let narrow = beam_search(&mt, &source, &[], width, 3).unwrap();
        prop_assert_eq!(narrow.len(), width.min(15));
        prop_assert!(narrow.iter().all(|h| all.contains(h)));
        prop_assert!(narrow.windows(2).all(|w| w[0].log_score >= w[1].log_score));
    }

    #[test]
    fn majority_is_permutation_invariant(seed in any::<u64>(), size in 1usize..12, pos in 0usize..3) {
        let mut r = rng(seed);
        let mut pool = random_pool(&mut r, size);
        let vote = aggregate_majority(&pool, pos);
        let oracle = plurality_oracle(&pool, pos);
        match &oracle {
            Some((t, c)) => {
                prop_assert_eq!(&vote.committed_prefix, &vec![t.clone()]);
                prop_assert_eq!(vote.support, *c);
            }
            None => prop_assert!(vote.committed_prefix.is_empty()),
        }
        let pi = policy_score(&vote);
        prop_assert!(pi == 0.0 || (pi >= 1.0 / size as f64 && pi <= 1.0));
        for _ in 0..5 {
            pool.shuffle(&mut r);
            prop_assert_eq!(&aggregate_majority(&pool, pos), &vote);
        }
    }

    #[test]
    fn ralcp_unanimity_is_lcp(seed in any::<u64>(), size in 1usize..8) {
        let mut r = rng(seed);
        let pool = random_pool(&mut r, size);
        let seqs: Vec<Vec<Token>> = pool.iter().map(|h| h.tokens.clone()).collect();
        let vote = ralcp_vote(&pool, 1.0, 0);
        prop_assert_eq!(&vote.committed_prefix, &strict_lcp(&seqs));
        prop_assert_eq!(&longest_common_prefix(&seqs), &strict_lcp(&seqs));
    }

    #[test]
    fn ralcp_prefix_shrinks_with_gamma(seed in any::<u64>(), size in 1usize..8, g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let pool = random_pool(&mut r, size);
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = ralcp_vote(&pool, lo, 0).committed_prefix;
        let b = ralcp_vote(&pool, hi, 0).committed_prefix;
        prop_assert!(a.starts_with(&b));
    }

    #[test]
    fn laal_bounds_al(delays in prop::collection::vec(1usize..=12, 1..20), ref_len in 1usize..20) {
        let mut delays = delays;
        delays.sort_unstable();
        let source_len = 12;
        let units = EvalUnits::new(Granularity::Word, source_len, delays.clone(), ref_len).unwrap();
        let laal = metrics::laal(&units).unwrap();
        let al = metrics::average_lagging(&units).unwrap();
        prop_assert!(laal >= al - 1e-12);
        if delays.len() >= ref_len {
            prop_assert_eq!(laal, al);
        }
        prop_assert!((laal - laal_oracle(&delays, source_len, ref_len)).abs() < 1e-9);
        prop_assert!((al - al_oracle(&delays, source_len)).abs() < 1e-9);
    }

    #[test]
    fn bleu_ignores_corpus_order(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let mut pairs: Vec<(String, String)> = (0..n)
            .map(|_| (random_sentence(&mut r, 4, 12, 6), random_sentence(&mut r, 4, 12, 6)))
            .collect();
        let score = |p: &[(String, String)]| {
            let (h, rf): (Vec<String>, Vec<String>) = p.iter().cloned().unzip();
            metrics::corpus_bleu(&h, &rf, Granularity::Word).unwrap()
        };
        let before = score(&pairs);
        let (h, rf): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
        prop_assert!((before - bleu_oracle(&h, &rf)).abs() < 1e-12);
        pairs.shuffle(&mut r);
        prop_assert!((score(&pairs) - before).abs() < 1e-12);
        let refs: Vec<String> = pairs.iter().map(|p| p.1.clone()).collect();
        prop_assert_eq!(metrics::corpus_bleu(&refs, &refs, Granularity::Word).unwrap(), 1.0);
    }

    #[test]
    fn converted_delays_are_monotone(seed in any::<u64>(), len in 1usize..10, character in any::<bool>()) {
        let source = source_of(len);
        let mut actions = random_actions(seed, len);
        actions.retain(|a| !a.tokens.iter().any(|t| t.is_eos));
        let mut state = StreamState::new();
        for a in &actions {
            let next = a.is_read().then(|| source.get(state.source_read.len()).cloned().unwrap_or_else(Token::eos));
            state.apply(a, next.as_ref()).unwrap();
        }
        let mut hyp = state.hypothesis.clone();
        for (i, t) in hyp.iter_mut().enumerate() {
            if i % 3 == 1 {
                *t = tok(&format!("{}@@", t.surface));
            }
        }
        let traj = Trajectory {
            actions,
            final_hypothesis: hyp,
            delays: state.delays.clone(),
            ..Default::default()
        };
        let g = if character { Granularity::Character } else { Granularity::Word };
        let source_text = source.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
        let units = metrics::convert_delays(&traj, &source_text, "r r r", g).unwrap();
        prop_assert!(units.hyp_delays.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(units.hyp_delays.iter().all(|&d| d <= units.source_len));
    }

    #[test]
    fn trim_never_commits_eos_early(words in prop::collection::vec("[a-c]", 0..5), exhausted in any::<bool>()) {
        let mut tokens: Vec<Token> = words.iter().map(|w| tok(w)).collect();
        tokens.push(Token::eos());
        let out = trim_commit(tokens.clone(), exhausted);
        prop_assert_eq!(out.iter().any(|t| t.is_eos), exhausted);
        prop_assert!(tokens.starts_with(&out));
    }
}

#[test]
fn top_k_sampling_frequencies_within_three_sigma() {
    let dist = NextTokenDistribution::new([
        (tok("a"), 0.35),
        (tok("b"), 0.25),
        (tok("c"), 0.2),
        (tok("d"), 0.15),
        (tok("e"), 0.05),
    ])
    .unwrap();
    let draws = 100_000;
    for (k, temperature) in [(3usize, 1.0), (5, 1.0), (2, 0.5)] {
        let top: Vec<(Token, f64)> = dist.ranked().into_iter().take(k).collect();
        let weights: Vec<f64> = top.iter().map(|(_, p)| p.powf(1.0 / temperature)).collect();
        let z: f64 = weights.iter().sum();
        let mut r = rng(k as u64);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            *counts
                .entry(sample_top_k(&dist, k, temperature, &mut r).unwrap())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), k, "only the top {k} tokens are drawn");
        for ((t, _), w) in top.iter().zip(&weights) {
            let p = w / z;
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            let got = counts[t] as f64;
            assert!(
                (got - draws as f64 * p).abs() <= 3.0 * sigma,
                "{t}: {got} vs {}",
                draws as f64 * p
            );
        }
    }
}

#[test]
fn wait_k_laal_tends_to_k() {
    for k in [1usize, 3, 5] {
        let delays: Vec<usize> = (0..50).map(|i| (k + i).min(50)).collect();
        let units = EvalUnits::new(Granularity::Word, 50, delays.clone(), 50).unwrap();
        let laal = metrics::laal(&units).unwrap();
        assert!((laal - k as f64).abs() < 1e-9, "K={k}: {laal}");
        assert!((laal - laal_oracle(&delays, 50, 50)).abs() < 1e-12);
    }
}

#[test]
fn tie_breaking_is_pinned() {
    let h = |s: &str, lp: f64| ScoredHypothesis {
        tokens: toks(s),
        log_score: lp,
    };
    let pool = vec![h("b", -1.0), h("a", -1.0), h("b", -1.0), h("a", -2.0)];
    let vote = aggregate_majority(&pool, 0);
    assert_eq!(
        (vote.committed_prefix, vote.support, vote.total),
        (toks("b"), 2, 4)
    );
    let pool = vec![h("b", -1.0), h("a", -1.0), h("b", -1.0), h("a", -1.0)];
    assert_eq!(aggregate_majority(&pool, 0).committed_prefix, toks("a"));
}
