//! Word-level vocabulary with character fallback.
//!
//! Text is split on whitespace only. A word that is a vocabulary word maps to
//! one token; any other word is spelled out as character tokens, and a
//! character missing from the vocabulary becomes `[UNKCH]`. Tokenization is
//! therefore total.
//!
//! Token ids are dense. The seven special tokens take ids `0..7`, followed by
//! the character tokens in code point order, followed by word tokens in
//! descending corpus frequency (ties broken lexicographically).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub type TokenId = u32;

const VOCAB_MAGIC: &str = "DMVOCAB 1";

/// SHA-256 digest of a vocabulary's token list.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VocabHash(pub [u8; 32]);

impl fmt::Display for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VocabHash({})", &hex::encode(self.0)[..12])
    }
}

impl FromStr for VocabHash {
    type Err = VocabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out)
            .map_err(|_| VocabError::Format(format!("invalid vocabulary hash {s:?}")))?;
        Ok(VocabHash(out))
    }
}

/// Reserved tokens. Their ids are their position in [`Special::ALL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Special {
    Head,
    Row,
    Eos,
    Nil,
    MentionStart,
    MentionEnd,
    UnknownChar,
}

impl Special {
    pub const ALL: [Special; 7] = [
        Special::Head,
        Special::Row,
        Special::Eos,
        Special::Nil,
        Special::MentionStart,
        Special::MentionEnd,
        Special::UnknownChar,
    ];

    pub const fn id(self) -> TokenId {
        self as TokenId
    }

    pub const fn name(self) -> &'static str {
        match self {
            Special::Head => "[HEAD]",
            Special::Row => "[ROW]",
            Special::Eos => "[EOS]",
            Special::Nil => "[NIL]",
            Special::MentionStart => "[M_START]",
            Special::MentionEnd => "[M_END]",
            Special::UnknownChar => "[UNKCH]",
        }
    }

    pub fn from_id(id: TokenId) -> Option<Special> {
        Special::ALL.get(id as usize).copied()
    }
}

pub const HEAD: TokenId = Special::Head.id();
pub const ROW: TokenId = Special::Row.id();
pub const EOS: TokenId = Special::Eos.id();
pub const NIL: TokenId = Special::Nil.id();
pub const M_START: TokenId = Special::MentionStart.id();
pub const M_END: TokenId = Special::MentionEnd.id();
pub const UNKCH: TokenId = Special::UnknownChar.id();

pub const SPECIAL_COUNT: usize = Special::ALL.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Special(Special),
    Char,
    Word,
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("max_size {max_size} cannot hold {required} special and character tokens")]
    TooSmall { max_size: usize, required: usize },
    #[error("vocabulary hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: VocabHash, found: VocabHash },
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(TokenId),
    #[error("malformed vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A token sequence tagged with the digest of the vocabulary that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub vocab_hash: VocabHash,
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>, vocab_hash: VocabHash) -> Self {
        TokenSeq { ids, vocab_hash }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    words: HashMap<String, TokenId>,
    chars: HashMap<char, TokenId>,
    hash: VocabHash,
}

impl Vocabulary {
    /// Builds a vocabulary of the specials, every distinct non-whitespace
    /// character of `corpus`, and as many of the most frequent words as fit in
    /// `max_size`.
    pub fn build<I, S>(corpus: I, max_size: usize) -> Result<Vocabulary, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut word_counts: HashMap<String, u64> = HashMap::new();
        let mut chars: Vec<char> = Vec::new();
        for line in corpus {
            for word in line.as_ref().split_whitespace() {
                chars.extend(word.chars());
                *word_counts.entry(word.to_owned()).or_insert(0) += 1;
            }
        }
        chars.sort_unstable();
        chars.dedup();

        let required = SPECIAL_COUNT + chars.len();
        if max_size < required {
            return Err(VocabError::TooSmall { max_size, required });
        }

        let mut words: Vec<(String, u64)> = word_counts.into_iter().collect();
        words.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        words.truncate(max_size - required);

        let mut tokens: Vec<String> = Special::ALL.iter().map(|s| s.name().to_owned()).collect();
        let mut kinds: Vec<TokenKind> = Special::ALL.iter().map(|&s| TokenKind::Special(s)).collect();
        for c in chars {
            tokens.push(c.to_string());
            kinds.push(TokenKind::Char);
        }
        for (w, _) in words {
            tokens.push(w);
            kinds.push(TokenKind::Word);
        }
        Ok(Self::from_parts(tokens, kinds))
    }

    fn from_parts(tokens: Vec<String>, kinds: Vec<TokenKind>) -> Vocabulary {
        let mut words = HashMap::new();
        let mut chars = HashMap::new();
        for (id, (tok, kind)) in tokens.iter().zip(&kinds).enumerate() {
            match kind {
                TokenKind::Word => {
                    words.insert(tok.clone(), id as TokenId);
                }
                TokenKind::Char => {
                    let c = tok.chars().next().expect("char token is non-empty");
                    chars.insert(c, id as TokenId);
                }
                TokenKind::Special(_) => {}
            }
        }
        let hash = content_hash(&tokens);
        Vocabulary { tokens, kinds, words, chars, hash }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn hash(&self) -> VocabHash {
        self.hash
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn kind(&self, id: TokenId) -> Option<TokenKind> {
        self.kinds.get(id as usize).copied()
    }

    pub fn word_id(&self, word: &str) -> Option<TokenId> {
        self.words.get(word).copied()
    }

    pub fn char_id(&self, c: char) -> Option<TokenId> {
        self.chars.get(&c).copied()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn check_hash(&self, found: VocabHash) -> Result<(), VocabError> {
        if found == self.hash {
            Ok(())
        } else {
            Err(VocabError::HashMismatch { expected: self.hash, found })
        }
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::new();
        self.tokenize_into(text, &mut ids);
        TokenSeq::new(ids, self.hash)
    }

    /// Appends the tokens of `text` to `out`.
    pub fn tokenize_into(&self, text: &str, out: &mut Vec<TokenId>) {
        for word in text.split_whitespace() {
            match self.words.get(word) {
                Some(&id) => out.push(id),
                None => out.extend(word.chars().map(|c| self.chars.get(&c).copied().unwrap_or(UNKCH))),
            }
        }
    }

    pub fn detokenize(&self, seq: &TokenSeq) -> Result<String, VocabError> {
        self.check_hash(seq.vocab_hash)?;
        self.detokenize_ids(&seq.ids)
    }

    /// Renders ids without a hash check. Word and special tokens are
    /// separated by single spaces; runs of character tokens are glued.
    pub fn detokenize_ids(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut out = String::new();
        let mut prev_char = false;
        for &id in ids {
            let kind = self.kind(id).ok_or(VocabError::UnknownId(id))?;
            let is_char = kind == TokenKind::Char;
            if !out.is_empty() && !(is_char && prev_char) {
                out.push(' ');
            }
            out.push_str(&self.tokens[id as usize]);
            prev_char = is_char;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{VOCAB_MAGIC}")?;
        writeln!(w, "{}", self.hash)?;
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        let file = fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocabulary, VocabError> {
        let file = fs::File::open(path)?;
        Self::read_from(BufReader::new(file))
    }

    /// Parses the `DMVOCAB 1` text format. Token kinds are recovered from the
    /// layout: the specials, then the strictly increasing run of single
    /// characters, then words.
    pub fn read_from<R: BufRead>(r: R) -> Result<Vocabulary, VocabError> {
        let mut lines = r.lines();
        let magic = lines.next().transpose()?.unwrap_or_default();
        if magic != VOCAB_MAGIC {
            return Err(VocabError::Format(format!("bad header {magic:?}")));
        }
        let declared: VocabHash = lines
            .next()
            .transpose()?
            .ok_or_else(|| VocabError::Format("missing hash line".into()))?
            .parse()?;

        let mut tokens = Vec::new();
        let mut kinds = Vec::new();
        let mut last_char: Option<char> = None;
        let mut in_chars = true;
        for (i, line) in lines.enumerate() {
            let tok = line?;
            if i < SPECIAL_COUNT {
                let expected = Special::ALL[i];
                if tok != expected.name() {
                    return Err(VocabError::Format(format!(
                        "line {}: expected special {}, found {tok:?}",
                        i + 3,
                        expected.name()
                    )));
                }
                kinds.push(TokenKind::Special(expected));
            } else {
                if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                    return Err(VocabError::Format(format!("line {}: invalid token {tok:?}", i + 3)));
                }
                let mut it = tok.chars();
                let single = match (it.next(), it.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                };
                in_chars = in_chars && matches!((single, last_char), (Some(c), prev) if prev.map_or(true, |p| c > p));
                if in_chars {
                    last_char = single;
                    kinds.push(TokenKind::Char);
                } else {
                    kinds.push(TokenKind::Word);
                }
            }
            tokens.push(tok);
        }
        if tokens.len() < SPECIAL_COUNT {
            return Err(VocabError::Format("truncated special token block".into()));
        }
        let vocab = Self::from_parts(tokens, kinds);
        if vocab.words.len() != vocab.kinds.iter().filter(|k| **k == TokenKind::Word).count() {
            return Err(VocabError::Format("duplicate word token".into()));
        }
        if vocab.hash != declared {
            return Err(VocabError::HashMismatch { expected: declared, found: vocab.hash });
        }
        Ok(vocab)
    }
}

fn content_hash(tokens: &[String]) -> VocabHash {
    let mut h = Sha256::new();
    h.update(VOCAB_MAGIC.as_bytes());
    h.update(b"\n");
    for t in tokens {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    VocabHash(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ample(corpus: &[&str]) -> Vocabulary {
        Vocabulary::build(corpus.iter().copied(), 10_000).unwrap()
    }

    #[test]
    fn two_line_corpus_counts() {
        // City x2, College x1; distinct chars C i t y o l e g.
        let v = ample(&["City College", "City"]);
        let city = v.word_id("City").unwrap();
        let college = v.word_id("College").unwrap();
        assert!(city < college, "more frequent word gets the lower id");
        let mut chars: Vec<char> = "Citylogeo".chars().collect();
        chars.sort_unstable();
        chars.dedup();
        assert_eq!(chars.len(), 8);
        for c in &chars {
            assert!(v.char_id(*c).is_some(), "missing char {c}");
        }
        assert!(v.char_id(' ').is_none());
        assert_eq!(v.len(), SPECIAL_COUNT + 8 + 2);
    }

    #[test]
    fn empty_corpus_is_specials_only() {
        let v = Vocabulary::build(Vec::<String>::new(), SPECIAL_COUNT).unwrap();
        assert_eq!(v.len(), SPECIAL_COUNT);
        assert_eq!(v.token(EOS), Some("[EOS]"));
    }

    #[test]
    fn max_size_below_specials_fails() {
        let err = Vocabulary::build(["a"], 3).unwrap_err();
        assert!(matches!(err, VocabError::TooSmall { required: 8, .. }));
    }

    #[test]
    fn truncation_keeps_frequent_words_with_lexicographic_ties() {
        let v = Vocabulary::build(["b a c a b"], SPECIAL_COUNT + 3 + 2).unwrap();
        assert!(v.word_id("a").is_some());
        assert!(v.word_id("b").is_some());
        assert!(v.word_id("c").is_none());
    }

    #[test]
    fn tokenize_words_and_fallback() {
        let v = ample(&["Manchester City", "Cty"]);
        let v2 = Vocabulary::build(["Manchester City"], SPECIAL_COUNT + 12 + 2).unwrap();
        assert_eq!(
            v.tokenize("Manchester City").ids,
            vec![v.word_id("Manchester").unwrap(), v.word_id("City").unwrap()]
        );
        // "Cty" is not a word of v2 but its characters are.
        let seq = v2.tokenize("Cty");
        assert_eq!(seq.ids, vec![v2.char_id('C').unwrap(), v2.char_id('t').unwrap(), v2.char_id('y').unwrap()]);
        assert_eq!(v2.detokenize(&seq).unwrap(), "Cty");
        assert!(v.tokenize("").is_empty());
        assert_eq!(v2.tokenize("Q").ids, vec![UNKCH]);
    }

    #[test]
    fn detokenize_mixes_words_chars_and_specials() {
        let v = ample(&["Manchester City", "x y"]);
        let mut ids = vec![HEAD, v.word_id("Manchester").unwrap()];
        ids.extend([v.char_id('x').unwrap(), v.char_id('y').unwrap()]);
        ids.push(v.word_id("City").unwrap());
        let s = v.detokenize_ids(&ids).unwrap();
        assert_eq!(s, "[HEAD] Manchester xy City");
    }

    #[test]
    fn detokenize_rejects_foreign_hash() {
        let a = ample(&["a"]);
        let b = ample(&["b"]);
        let seq = a.tokenize("a");
        assert!(matches!(b.detokenize(&seq), Err(VocabError::HashMismatch { .. })));
    }

    #[test]
    fn file_round_trip_preserves_kinds_and_hash() {
        // "a" is both a character and a frequent single-character word.
        let v = ample(&["a a b bc", "zz a"]);
        assert!(v.word_id("a").is_some());
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("DMVOCAB 1\n"));
        let back = Vocabulary::read_from(&buf[..]).unwrap();
        assert_eq!(back.hash(), v.hash());
        assert_eq!(back.kinds, v.kinds);
        assert_eq!(back.tokenize("a b zz").ids, v.tokenize("a b zz").ids);
    }

    #[test]
    fn file_with_tampered_token_fails_hash_check() {
        let v = ample(&["alpha beta"]);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("beta", "gamma");
        assert!(matches!(
            Vocabulary::read_from(text.as_bytes()),
            Err(VocabError::HashMismatch { .. })
        ));
        assert!(matches!(Vocabulary::read_from(&b"DMVOCAB 2\n"[..]), Err(VocabError::Format(_))));
    }

    #[test]
    fn synthetic_catalog_round_trip() {
        // Every name of a 1000-name synthetic catalog survives
        // detokenize(tokenize(.)), whether its words hit the word list or fall
        // back to characters.
        let words: Vec<String> = (0..300).map(|i| format!("w{i}x")).collect();
        let names: Vec<String> = (0..1000)
            .map(|i| {
                let n = 1 + i % 4;
                (0..n).map(|j| words[(i * 7 + j * 13) % words.len()].as_str()).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let v = Vocabulary::build(&names, 10_000).unwrap();
        for name in &names {
            assert_eq!(&v.detokenize(&v.tokenize(name)).unwrap(), name);
        }
        // Single fallback words also round trip even with no word list at all.
        let chars_only = Vocabulary::build(&names, SPECIAL_COUNT + 12).unwrap();
        for name in names.iter().filter(|n| !n.contains(' ')) {
            assert_eq!(&chars_only.detokenize(&chars_only.tokenize(name)).unwrap(), name);
        }
    }

    proptest! {
        #[test]
        fn round_trip_over_vocab_words(idx in proptest::collection::vec(0usize..6, 0..8)) {
            let pool = ["Manchester", "United", "F.C.", "City", "W.F.C", "a"];
            let v = ample(&pool);
            let s = idx.iter().map(|&i| pool[i]).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(v.detokenize(&v.tokenize(&s)).unwrap(), s);
        }

        #[test]
        fn tokenize_is_total_and_in_range(s in "\\PC{0,40}") {
            let v = ample(&["abc def", "ghi"]);
            let seq = v.tokenize(&s);
            prop_assert!(seq.ids.iter().all(|&id| (id as usize) < v.len()));
            prop_assert_eq!(seq.ids.clone(), v.tokenize(&s).ids);
        }
    }
}
