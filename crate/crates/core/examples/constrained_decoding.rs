//! Trie-constrained beam search against exhaustive scoring, with both the
//! uniform and the lexical scorer.

use dmel::catalog::CandidateSet;
use dmel::decoder::{beam_decode, rank_exhaustive, DecodeOptions};
use dmel::preprocess::FlatInput;
use dmel::scorer::{LexicalParams, LexicalScorer, MockScorer, Scorer};
use dmel::tokenizer::{TokenSeq, Vocabulary};
use dmel::trie::EntityTrie;

const NAMES: [&str; 4] =
    ["Manchester United F.C.", "Manchester City F.C.", "Manchester City W.F.C", "City College Manchester"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let context = "she studied at City College before moving south";
    let vocab = Vocabulary::build(NAMES.into_iter().chain([context]), usize::MAX)?;
    let seqs: Vec<TokenSeq> = NAMES.iter().map(|n| vocab.tokenize(n)).collect();
    let trie = EntityTrie::build(vocab.hash(), &seqs)?;
    let input = FlatInput::from_tokens(vocab.tokenize(context));
    let candidates = CandidateSet::new("m1", NAMES.iter().map(|s| s.to_string()).collect(), true)?;
    let lexical = LexicalScorer::new(&vocab, &seqs, LexicalParams::default())?;

    for (label, scorer) in [("mock", &MockScorer as &dyn Scorer), ("lexical", &lexical)] {
        println!("== {label}");
        for beam in [1, 2, 4] {
            let options = DecodeOptions { beam, ..Default::default() };
            let out = beam_decode(scorer, &input, &trie, &vocab, &options)?;
            let shown: Vec<String> = out.ranking.iter().map(|e| format!("{} ({:.3})", e.entity, e.score)).collect();
            println!("beam {beam}: {} | {} scorer calls", shown.join(", "), out.stats.scorer_calls);
        }
        let all = rank_exhaustive(scorer, &input, &candidates, &vocab, &trie, &DecodeOptions::default())?;
        println!("exhaustive top: {} ({:.3})", all[0].entity, all[0].score);
    }
    Ok(())
}
