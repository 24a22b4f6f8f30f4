//! Catalog linking end to end. A small dataset is linked in parallel against
//! a loaded catalog, then the results file is written and read back.

use std::fs;

use dmel::catalog::EntityCatalog;
use dmel::link::{load_results, save_results, LinkOptions, Linker, ResultsHeader, RESULTS_FORMAT};
use dmel::preprocess::load_instances;
use dmel::scorer::{LexicalParams, LexicalScorer};
use dmel::tokenizer::{TokenSeq, Vocabulary};
use dmel::trie::EntityTrie;

const CATALOG: &str = r#"{"id":"Q1","name":"Manchester United F.C."}
{"id":"Q2","name":"Manchester City F.C.","aliases":["Man City"]}
{"id":"Q3","name":"Manchester City W.F.C"}
{"id":"Q4","name":"City College Manchester"}
"#;

const DATASET: &str = r#"{"id":"d1","text":"fans of City College cheered","mention":{"start":8,"end":20},"gold":"City College Manchester"}
{"id":"d2","text":"United won at home","mention":{"start":0,"end":6},"gold":"Manchester United F.C."}
{"id":"d3","text":"Manchester City W.F.C won the league","mention":{"start":0,"end":21},"gold":"Manchester City W.F.C"}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    fs::write(dir.path().join("catalog.jsonl"), CATALOG)?;
    fs::write(dir.path().join("data.jsonl"), DATASET)?;

    let catalog = EntityCatalog::load(dir.path().join("catalog.jsonl"))?;
    let dataset = load_instances(dir.path().join("data.jsonl"))?;
    let corpus = catalog.names().into_iter().chain(dataset.iter().map(|i| i.text.clone()));
    let vocab = Vocabulary::build(corpus, usize::MAX)?;
    let seqs: Vec<TokenSeq> = catalog.names().iter().map(|n| vocab.tokenize(n)).collect();
    let trie = EntityTrie::build(vocab.hash(), &seqs)?;
    let scorer = LexicalScorer::new(&vocab, &seqs, LexicalParams::default())?;

    let mut options = LinkOptions::default();
    options.decode.beam = 2;
    let linker = Linker::new(&vocab, &scorer, options.clone())?.with_catalog(&catalog, Some(trie))?;
    let results = linker.link_all(&dataset, 2)?;
    // d3 misses: the single-branch path through "City College" pays only
    // for its first token, while the W.F.C path pays at three branch points.
    for (r, inst) in results.iter().zip(&dataset) {
        let score = r.best_logscore.unwrap_or(f64::NEG_INFINITY);
        println!("{} -> {:?} ({score:.3}), gold {:?}", r.instance_id, r.prediction, inst.gold);
    }

    let header = ResultsHeader {
        format: RESULTS_FORMAT.into(),
        vocab: vocab.hash().to_string(),
        config: serde_json::to_value(&options)?,
    };
    let path = dir.path().join("results.jsonl");
    save_results(&path, &header, &results)?;
    let (read_header, reread) = load_results(&path)?;
    assert_eq!(reread, results);
    println!("results file holds {} lines, header {:?}", reread.len() + 1, read_header.map(|h| h.format));
    Ok(())
}
