//! Builds a vocabulary, tokenizes text with character fallback for unseen
//! words, and round-trips the vocabulary file.
//!
//! ```bash
//! cargo run -p dmel --example tokenizer
//! ```

use dmel::tokenizer::{Vocabulary, EOS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = ["Manchester United F.C.", "Manchester City F.C.", "City College Manchester"];
    let vocab = Vocabulary::build(corpus, 10_000)?;
    println!("{} tokens, hash {}", vocab.len(), vocab.hash());

    for text in ["Manchester City", "Mancunian City"] {
        let seq = vocab.tokenize(text);
        let pieces: Vec<String> =
            seq.ids.iter().map(|&id| format!("{}:{}", id, vocab.token(id).unwrap_or("?"))).collect();
        println!("{text:?} -> {}", pieces.join(" "));
        println!("  back: {:?}", vocab.detokenize(&seq)?);
    }
    println!("[EOS] is id {EOS}");

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("vocab.txt");
    vocab.save(&path)?;
    let reloaded = Vocabulary::load(&path)?;
    assert_eq!(reloaded.hash(), vocab.hash());
    println!("reloaded from {} with the same hash", path.display());
    Ok(())
}
