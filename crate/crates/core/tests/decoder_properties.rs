use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use dmel::catalog::CandidateSet;
use dmel::decoder::{beam_decode, rank_exhaustive, DecodeOptions, ScoredEntity};
use dmel::preprocess::FlatInput;
use dmel::scorer::{LexicalParams, LexicalScorer, MockScorer, Scorer};
use dmel::synth;
use dmel::tokenizer::{TokenId, TokenSeq, Vocabulary, EOS};
use dmel::trie::EntityTrie;

struct Fixture {
    names: Vec<String>,
    vocab: Vocabulary,
    seqs: Vec<TokenSeq>,
    trie: EntityTrie,
    input: FlatInput,
}

fn fixture(names: Vec<String>, context: &str) -> Fixture {
    let vocab = Vocabulary::build(names.iter().map(String::as_str).chain([context]), usize::MAX).unwrap();
    let seqs: Vec<TokenSeq> = names.iter().map(|n| vocab.tokenize(n)).collect();
    let trie = EntityTrie::build(vocab.hash(), &seqs).unwrap();
    let input = FlatInput::from_tokens(vocab.tokenize(context));
    Fixture { names, vocab, seqs, trie, input }
}

fn random_fixture(seed: u64, n: usize) -> Fixture {
    let mut r = synth::rng(seed);
    let lexicon = r.gen_range(2..=10);
    let names = synth::branching_names(&mut r, n, 6, lexicon);
    let context: Vec<String> = (0..5).map(|_| synth::word(r.gen_range(0..lexicon + 3))).collect();
    fixture(names, &context.join(" "))
}

/// Uniform log-score of every name, from continuation sets kept in plain maps.
fn uniform_oracle(seqs: &[TokenSeq]) -> HashMap<Vec<TokenId>, f64> {
    let mut cont: HashMap<&[TokenId], BTreeSet<TokenId>> = HashMap::new();
    for s in seqs {
        for j in 0..s.ids.len() {
            cont.entry(&s.ids[..j]).or_default().insert(s.ids[j]);
        }
        cont.entry(&s.ids[..]).or_default().insert(EOS);
    }
    seqs.iter()
        .map(|s| {
            let score = (0..=s.ids.len()).map(|j| -(cont[&s.ids[..j]].len() as f64).ln()).sum();
            (s.ids.clone(), score)
        })
        .collect()
}

fn exhaustive(f: &Fixture, scorer: &dyn Scorer, beam: usize) -> Vec<ScoredEntity> {
    let cands = CandidateSet::new("m", f.names.clone(), true).unwrap();
    rank_exhaustive(scorer, &f.input, &cands, &f.vocab, &f.trie, &DecodeOptions { beam, ..Default::default() }).unwrap()
}

fn beam(f: &Fixture, scorer: &dyn Scorer, beam: usize) -> Vec<ScoredEntity> {
    beam_decode(scorer, &f.input, &f.trie, &f.vocab, &DecodeOptions { beam, ..Default::default() }).unwrap().ranking
}

fn assert_same(a: &[ScoredEntity], b: &[ScoredEntity]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.entity, y.entity);
        assert!((x.score - y.score).abs() <= 1e-9, "{} vs {}", x.score, y.score);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_scores_match_oracle(seed in any::<u64>(), n in 1usize..40) {
        let f = random_fixture(seed, n);
        let oracle = uniform_oracle(&f.seqs);
        for e in exhaustive(&f, &MockScorer, n) {
            let ids = f.vocab.tokenize(&e.entity).ids;
            prop_assert!((oracle[&ids] - e.score).abs() <= 1e-9);
        }
        let total: f64 = oracle.values().map(|s| s.exp()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9, "probability mass {}", total);
    }

    #[test]
    fn wide_beam_is_exhaustive(seed in any::<u64>(), n in 1usize..40) {
        let f = random_fixture(seed, n);
        let lexical = LexicalScorer::new(&f.vocab, &f.seqs, LexicalParams::default()).unwrap();
        for scorer in [&MockScorer as &dyn Scorer, &lexical] {
            assert_same(&beam(&f, scorer, n), &exhaustive(&f, scorer, n));
            assert_same(&beam(&f, scorer, n + 5), &exhaustive(&f, scorer, n));
        }
    }

    #[test]
    fn narrow_beam_scores_are_exact(seed in any::<u64>(), n in 2usize..40, b in 1usize..6) {
        let f = random_fixture(seed, n);
        let lexical = LexicalScorer::new(&f.vocab, &f.seqs, LexicalParams::default()).unwrap();
        let exact: HashMap<String, f64> =
            exhaustive(&f, &lexical, n).into_iter().map(|e| (e.entity, e.score)).collect();
        let best = exact.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        for e in beam(&f, &lexical, b) {
            prop_assert!((exact[&e.entity] - e.score).abs() <= 1e-9);
            prop_assert!(e.score <= best + 1e-12);
        }
    }

    #[test]
    fn catalog_order_does_not_matter(seed in any::<u64>(), n in 1usize..30) {
        let f = random_fixture(seed, n);
        let mut shuffled = f.names.clone();
        shuffled.shuffle(&mut synth::rng(seed ^ 1));
        let context = f.vocab.detokenize(&f.input.tokens).unwrap();
        let g = fixture(shuffled, &context);
        prop_assert_eq!(f.vocab.hash(), g.vocab.hash());
        for b in [1, 3, n] {
            assert_same(&beam(&f, &MockScorer, b), &beam(&g, &MockScorer, b));
        }
    }

    #[test]
    fn every_result_is_a_catalog_name(seed in any::<u64>(), n in 1usize..40, b in 1usize..8) {
        let f = random_fixture(seed, n);
        let ranking = beam(&f, &MockScorer, b);
        prop_assert!(!ranking.is_empty() && ranking.len() <= b.min(n));
        for e in &ranking {
            prop_assert!(f.names.contains(&e.entity));
        }
    }
}

#[test]
fn scorer_calls_do_not_grow_with_catalog_size() {
    let b = 10;
    let mut calls = Vec::new();
    for n in [1_000, 100_000] {
        let names = synth::entity_names(17, n, 20_000);
        let context = names[..3].join(" ");
        let f = fixture(names, &context);
        let out = beam_decode(&MockScorer, &f.input, &f.trie, &f.vocab, &DecodeOptions { beam: b, ..Default::default() })
            .unwrap();
        assert!(out.stats.scorer_calls <= b * 9, "{} calls at {n}", out.stats.scorer_calls);
        calls.push(out.stats.scorer_calls);
    }
    assert!(calls[1] as f64 <= calls[0] as f64 * 1.5, "{calls:?}");
}
