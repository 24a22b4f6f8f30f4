//! The four-name trie from the Manchester example: prefix queries, the
//! explicit end-of-name leaves, and the checksummed binary file.

use dmel::tokenizer::{TokenSeq, Vocabulary};
use dmel::trie::EntityTrie;

const NAMES: [&str; 4] =
    ["Manchester United F.C.", "Manchester City F.C.", "Manchester City W.F.C", "City College Manchester"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::build(NAMES, usize::MAX)?;
    let seqs: Vec<TokenSeq> = NAMES.iter().map(|n| vocab.tokenize(n)).collect();
    let trie = EntityTrie::build(vocab.hash(), &seqs)?;
    println!("{} entities in {} nodes", trie.entity_count(), trie.node_count());

    for prefix in ["", "Manchester", "Manchester City", "Manchester City F.C."] {
        let ids = vocab.tokenize(prefix).ids;
        let next: Vec<&str> =
            trie.allowed_continuations(&ids)?.iter().map(|&t| vocab.token(t).unwrap_or("?")).collect();
        println!("after {prefix:?}: {next:?}");
    }

    let mut bytes = Vec::new();
    trie.write_to(&mut bytes)?;
    let back = EntityTrie::read_from(bytes.as_slice())?;
    println!("binary form: {} bytes, round trip equal: {}", bytes.len(), back == trie);

    bytes[10] ^= 0xff;
    match EntityTrie::read_from(bytes.as_slice()) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted copy rejected: {e}"),
    }
    Ok(())
}
