//! Serves the lexical scorer over TCP with the line-delimited JSON protocol
//! and decodes through it. The rankings match the in-process scorer.

use std::io::BufReader;
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use dmel::decoder::{beam_decode, DecodeOptions};
use dmel::preprocess::FlatInput;
use dmel::scorer::{protocol, Endpoint, ExternalScorer, LexicalParams, LexicalScorer, DEFAULT_TIMEOUT};
use dmel::tokenizer::{TokenSeq, Vocabulary};
use dmel::trie::EntityTrie;

const NAMES: [&str; 4] =
    ["Manchester United F.C.", "Manchester City F.C.", "Manchester City W.F.C", "City College Manchester"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let context = "the City W.F.C squad won again";
    let vocab = Vocabulary::build(NAMES.into_iter().chain([context]), usize::MAX)?;
    let seqs: Vec<TokenSeq> = NAMES.iter().map(|n| vocab.tokenize(n)).collect();
    let trie = EntityTrie::build(vocab.hash(), &seqs)?;
    let lexical = Arc::new(LexicalScorer::new(&vocab, &seqs, LexicalParams::default())?);

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let hash = vocab.hash();
    {
        let lexical = Arc::clone(&lexical);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let lexical = Arc::clone(&lexical);
                thread::spawn(move || {
                    let reader = BufReader::new(stream.try_clone().expect("clone socket"));
                    let served = protocol::serve(&*lexical, Some(hash), reader, stream).unwrap_or(0);
                    eprintln!("connection closed after {served} requests");
                });
            }
        });
    }

    let endpoint: Endpoint = addr.to_string().parse()?;
    println!("scoring through {endpoint}");
    let remote = ExternalScorer::connect(endpoint, vocab.hash(), 2, DEFAULT_TIMEOUT)?;

    let input = FlatInput::from_tokens(vocab.tokenize(context));
    let options = DecodeOptions { beam: 4, ..Default::default() };
    let local = beam_decode(&*lexical, &input, &trie, &vocab, &options)?.ranking;
    let over_wire = beam_decode(&remote, &input, &trie, &vocab, &options)?.ranking;
    for (a, b) in local.iter().zip(&over_wire) {
        println!("{:<26} local {:>9.5}  remote {:>9.5}", a.entity, a.score, b.score);
    }
    assert_eq!(local, over_wire);
    Ok(())
}
