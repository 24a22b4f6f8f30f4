//! Top-level error with the exit-code classes used by the command line.

use thiserror::Error;

use crate::catalog::CatalogError;
use crate::decoder::DecodeError;
use crate::eval::EvalError;
use crate::preprocess::PreprocessError;
use crate::scorer::ScoreError;
use crate::tokenizer::VocabError;
use crate::trie::TrieError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Format,
    Protocol,
    Precondition,
}

impl ErrorClass {
    /// Process exit status. 2 is left to argument parsing.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Io => 3,
            ErrorClass::Format => 4,
            ErrorClass::Protocol => 5,
            ErrorClass::Precondition => 6,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary: {0}")]
    Vocab(#[from] VocabError),
    #[error("trie: {0}")]
    Trie(#[from] TrieError),
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("dataset: {0}")]
    Preprocess(#[from] PreprocessError),
    #[error("scorer: {0}")]
    Score(#[from] ScoreError),
    #[error("decoding: {0}")]
    Decode(#[from] DecodeError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Precondition(String),
    #[error("instance {id}: {source}")]
    Instance { id: String, source: Box<Error> },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub fn in_instance(id: impl Into<String>, source: impl Into<Error>) -> Self {
        Error::Instance { id: id.into(), source: Box::new(source.into()) }
    }

    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            Error::Vocab(e) => vocab_class(e),
            Error::Trie(e) => match e {
                TrieError::Io(_) => Io,
                TrieError::BadMagic
                | TrieError::UnsupportedVersion(_)
                | TrieError::Truncated
                | TrieError::Checksum
                | TrieError::Corrupt(_) => Format,
                TrieError::MixedVocab { .. } | TrieError::EmptySequence { .. } | TrieError::DeadPrefix { .. } => {
                    Precondition
                }
            },
            Error::Catalog(e) => match e {
                CatalogError::Io(_) => Io,
                CatalogError::Malformed { .. } | CatalogError::DuplicateId { .. } | CatalogError::EmptyName { .. } => Format,
                _ => Precondition,
            },
            Error::Preprocess(e) => match e {
                PreprocessError::Io(_) => Io,
                PreprocessError::Parse { .. } | PreprocessError::DuplicateId { .. } => Format,
                _ => Precondition,
            },
            Error::Score(e) => score_class(e),
            Error::Decode(e) => match e {
                DecodeError::Score(s) => score_class(s),
                DecodeError::Vocab(v) => vocab_class(v),
                _ => Precondition,
            },
            Error::Eval(e) => match e {
                EvalError::Io(_) => Io,
                EvalError::Json(_) => Format,
                _ => Precondition,
            },
            Error::Json { .. } => Format,
            Error::Io { .. } => Io,
            Error::Precondition(_) => Precondition,
            Error::Instance { source, .. } => source.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }
}

fn vocab_class(e: &VocabError) -> ErrorClass {
    match e {
        VocabError::Io(_) => ErrorClass::Io,
        VocabError::Format(_) => ErrorClass::Format,
        _ => ErrorClass::Precondition,
    }
}

fn score_class(e: &ScoreError) -> ErrorClass {
    match e {
        ScoreError::Io(_) => ErrorClass::Io,
        ScoreError::InvalidParams(_) | ScoreError::EmptyAllowed => ErrorClass::Precondition,
        _ => ErrorClass::Protocol,
    }
}
