pub mod normalize;
pub mod tokenizer;
pub mod trie;
pub mod catalog;
pub mod preprocess;
pub mod scorer;
pub mod serde_ext;
pub mod decoder;
pub mod eval;
pub mod error;
pub mod link;
pub mod synth;
pub mod cli;
