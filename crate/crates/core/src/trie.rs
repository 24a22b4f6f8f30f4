//! Prefix trie over tokenized entity names.
//!
//! Nodes live in one contiguous table (struct-of-arrays). The children of a
//! node occupy a contiguous block sorted by token id, so a child lookup is a
//! binary search over a slice and the block itself doubles as the allowed
//! continuation set handed to scorers. Every inserted name is terminated by
//! an `[EOS]` node; those nodes are exactly the terminal nodes.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "DMTR" | u32 version=1 | [u8; 32] vocab hash | u64 nodes | u64 entities
//! nodes × (u32 token | u64 first child | u32 child count | u8 terminal)
//! u32 CRC-32 of everything above
//! ```

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tokenizer::{TokenId, TokenSeq, VocabHash, EOS};

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

/// Token stored for the root node, which stands for the empty prefix.
pub const ROOT_TOKEN: TokenId = u32::MAX;

const MAGIC: &[u8; 4] = b"DMTR";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 32 + 8 + 8;
const NODE_LEN: usize = 4 + 8 + 4 + 1;

#[derive(Debug, Error)]
pub enum TrieError {
    #[error("sequence {index} was produced by a different vocabulary")]
    MixedVocab { index: usize },
    #[error("sequence {index} is empty")]
    EmptySequence { index: usize },
    #[error("prefix leaves the trie at position {depth}")]
    DeadPrefix { depth: usize },
    #[error("not a trie file (bad magic)")]
    BadMagic,
    #[error("unsupported trie format version {0}")]
    UnsupportedVersion(u32),
    #[error("trie file is truncated")]
    Truncated,
    #[error("trie checksum mismatch")]
    Checksum,
    #[error("corrupt trie: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityTrie {
    tokens: Vec<TokenId>,
    first_child: Vec<u64>,
    child_count: Vec<u32>,
    terminal: Vec<bool>,
    entity_count: u64,
    vocab_hash: VocabHash,
}

impl EntityTrie {
    pub fn empty(vocab_hash: VocabHash) -> Self {
        EntityTrie {
            tokens: vec![ROOT_TOKEN],
            first_child: vec![0],
            child_count: vec![0],
            terminal: vec![false],
            entity_count: 0,
            vocab_hash,
        }
    }

    /// Builds a trie from tokenized names. Every name must carry `vocab_hash`
    /// and be non-empty; duplicate names collapse to one entity.
    pub fn build(vocab_hash: VocabHash, names: &[TokenSeq]) -> Result<Self, TrieError> {
        for (index, seq) in names.iter().enumerate() {
            if seq.vocab_hash != vocab_hash {
                return Err(TrieError::MixedVocab { index });
            }
        }
        Self::build_from_ids(vocab_hash, names.iter().map(|s| s.ids.as_slice()))
    }

    pub fn build_from_ids<'a, I>(vocab_hash: VocabHash, names: I) -> Result<Self, TrieError>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        // Flatten every name plus its [EOS] into one buffer.
        let mut data: Vec<TokenId> = Vec::new();
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for (index, ids) in names.into_iter().enumerate() {
            if ids.is_empty() {
                return Err(TrieError::EmptySequence { index });
            }
            let start = data.len();
            data.extend_from_slice(ids);
            data.push(EOS);
            spans.push((start, data.len()));
        }
        let seq = |&(a, b): &(usize, usize)| &data[a..b];
        spans.sort_unstable_by(|x, y| seq(x).cmp(seq(y)));
        spans.dedup_by(|x, y| seq(x) == seq(y));

        let mut trie = Self::empty(vocab_hash);
        trie.entity_count = spans.len() as u64;
        let approx_nodes = spans.len() * 4 + 1;
        trie.tokens.reserve(approx_nodes);
        trie.first_child.reserve(approx_nodes);
        trie.child_count.reserve(approx_nodes);
        trie.terminal.reserve(approx_nodes);

        // (node, lo, hi, depth): spans[lo..hi] all pass through `node`, which
        // sits at `depth`.
        let mut stack: Vec<(NodeId, usize, usize, usize)> = vec![(ROOT, 0, spans.len(), 0)];
        let mut groups: Vec<(TokenId, usize, usize)> = Vec::new();
        while let Some((node, lo, hi, depth)) = stack.pop() {
            groups.clear();
            let mut i = lo;
            while i < hi {
                let tok = seq(&spans[i])[depth];
                let mut j = i + 1;
                while j < hi && seq(&spans[j])[depth] == tok {
                    j += 1;
                }
                groups.push((tok, i, j));
                i = j;
            }
            if groups.is_empty() {
                continue;
            }
            let first = trie.tokens.len();
            trie.first_child[node] = first as u64;
            trie.child_count[node] = groups.len() as u32;
            for &(tok, _, _) in &groups {
                trie.tokens.push(tok);
                trie.first_child.push(0);
                trie.child_count.push(0);
                trie.terminal.push(tok == EOS);
            }
            for (k, &(tok, a, b)) in groups.iter().enumerate().rev() {
                if tok != EOS {
                    stack.push((first + k, a, b, depth + 1));
                }
            }
        }
        Ok(trie)
    }

    pub fn vocab_hash(&self) -> VocabHash {
        self.vocab_hash
    }

    pub fn entity_count(&self) -> u64 {
        self.entity_count
    }

    pub fn node_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_count == 0
    }

    pub fn token(&self, node: NodeId) -> TokenId {
        self.tokens[node]
    }

    pub fn is_terminal(&self, node: NodeId) -> bool {
        self.terminal[node]
    }

    /// First child id and number of children of `node`.
    pub fn child_range(&self, node: NodeId) -> std::ops::Range<NodeId> {
        let first = self.first_child[node] as usize;
        first..first + self.child_count[node] as usize
    }

    /// Token ids of the children of `node`, ascending.
    pub fn children(&self, node: NodeId) -> &[TokenId] {
        &self.tokens[self.child_range(node)]
    }

    pub fn child(&self, node: NodeId, token: TokenId) -> Option<NodeId> {
        let range = self.child_range(node);
        self.tokens[range.clone()].binary_search(&token).ok().map(|k| range.start + k)
    }

    /// Follows `prefix` from the root.
    pub fn walk(&self, prefix: &[TokenId]) -> Result<NodeId, TrieError> {
        let mut node = ROOT;
        for (depth, &tok) in prefix.iter().enumerate() {
            node = self.child(node, tok).ok_or(TrieError::DeadPrefix { depth })?;
        }
        Ok(node)
    }

    /// Tokens allowed after `prefix`; includes `[EOS]` iff a name ends there.
    pub fn allowed_continuations(&self, prefix: &[TokenId]) -> Result<&[TokenId], TrieError> {
        self.walk(prefix).map(|n| self.children(n))
    }

    pub fn contains_ids(&self, seq: &[TokenId]) -> bool {
        if seq.is_empty() {
            return false;
        }
        self.walk(seq).ok().and_then(|n| self.child(n, EOS)).is_some()
    }

    /// True iff `seq` followed by `[EOS]` is a root-to-terminal path. A
    /// sequence from another vocabulary is never contained.
    pub fn contains(&self, seq: &TokenSeq) -> bool {
        seq.vocab_hash == self.vocab_hash && self.contains_ids(&seq.ids)
    }

    /// All stored names (without `[EOS]`) in ascending token order.
    pub fn entities(&self) -> Vec<Vec<TokenId>> {
        let mut out = Vec::with_capacity(self.entity_count as usize);
        let mut path: Vec<TokenId> = Vec::new();
        // (node, depth) with depth = path length before the node's token.
        let mut stack: Vec<(NodeId, usize)> = self.child_range(ROOT).rev().map(|c| (c, 0)).collect();
        while let Some((node, depth)) = stack.pop() {
            path.truncate(depth);
            if self.terminal[node] {
                out.push(path.clone());
                continue;
            }
            path.push(self.tokens[node]);
            stack.extend(self.child_range(node).rev().map(|c| (c, depth + 1)));
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = CrcWriter { inner: w, crc: crc32fast::Hasher::new() };
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.vocab_hash.0)?;
        w.write_all(&(self.tokens.len() as u64).to_le_bytes())?;
        w.write_all(&self.entity_count.to_le_bytes())?;
        let mut buf = [0u8; NODE_LEN];
        for i in 0..self.tokens.len() {
            buf[0..4].copy_from_slice(&self.tokens[i].to_le_bytes());
            buf[4..12].copy_from_slice(&self.first_child[i].to_le_bytes());
            buf[12..16].copy_from_slice(&self.child_count[i].to_le_bytes());
            buf[16] = self.terminal[i] as u8;
            w.write_all(&buf)?;
        }
        let crc = w.crc.clone().finalize();
        w.inner.write_all(&crc.to_le_bytes())?;
        w.inner.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrieError> {
        self.write_to(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrieError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Reads a serialized trie. The header is validated before any node data
    /// is read; the vocabulary hash is returned as stored and left for the
    /// caller to compare.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TrieError> {
        let mut header = [0u8; HEADER_LEN];
        read_exact_or_truncated(&mut r, &mut header[..4])?;
        if &header[..4] != MAGIC {
            return Err(TrieError::BadMagic);
        }
        read_exact_or_truncated(&mut r, &mut header[4..])?;
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(TrieError::UnsupportedVersion(version));
        }
        let mut hash = [0u8; 32];
        hash.copy_from_slice(&header[8..40]);
        let node_count = u64::from_le_bytes(header[40..48].try_into().unwrap());
        let entity_count = u64::from_le_bytes(header[48..56].try_into().unwrap());
        if node_count == 0 {
            return Err(TrieError::Corrupt("zero nodes".into()));
        }
        let body_len = node_count
            .checked_mul(NODE_LEN as u64)
            .and_then(|n| n.checked_add(4))
            .ok_or_else(|| TrieError::Corrupt("node count overflows".into()))?;

        let mut body = Vec::new();
        r.by_ref().take(body_len).read_to_end(&mut body)?;
        if (body.len() as u64) < body_len {
            return Err(TrieError::Truncated);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(TrieError::Corrupt("trailing bytes after checksum".into()));
        }
        let (nodes, crc_bytes) = body.split_at(body.len() - 4);
        let mut crc = crc32fast::Hasher::new();
        crc.update(&header);
        crc.update(nodes);
        if crc.finalize() != u32::from_le_bytes(crc_bytes.try_into().unwrap()) {
            return Err(TrieError::Checksum);
        }

        let n = node_count as usize;
        let mut trie = EntityTrie {
            tokens: Vec::with_capacity(n),
            first_child: Vec::with_capacity(n),
            child_count: Vec::with_capacity(n),
            terminal: Vec::with_capacity(n),
            entity_count,
            vocab_hash: VocabHash(hash),
        };
        for rec in nodes.chunks_exact(NODE_LEN) {
            trie.tokens.push(u32::from_le_bytes(rec[0..4].try_into().unwrap()));
            trie.first_child.push(u64::from_le_bytes(rec[4..12].try_into().unwrap()));
            trie.child_count.push(u32::from_le_bytes(rec[12..16].try_into().unwrap()));
            trie.terminal.push(match rec[16] {
                0 => false,
                1 => true,
                b => return Err(TrieError::Corrupt(format!("terminal flag {b}"))),
            });
        }
        trie.validate()?;
        Ok(trie)
    }

    /// Checks the structural invariants of a decoded node table.
    fn validate(&self) -> Result<(), TrieError> {
        let n = self.tokens.len();
        let corrupt = |m: String| Err(TrieError::Corrupt(m));
        if self.tokens[ROOT] != ROOT_TOKEN || self.terminal[ROOT] {
            return corrupt("bad root node".into());
        }
        let mut seen = vec![false; n];
        seen[ROOT] = true;
        let mut terminals = 0u64;
        for node in 0..n {
            let count = self.child_count[node] as u64;
            let first = self.first_child[node];
            if self.terminal[node] {
                terminals += 1;
                if self.tokens[node] != EOS || count != 0 {
                    return corrupt(format!("terminal node {node} is not a leaf [EOS]"));
                }
            } else if node != ROOT && (self.tokens[node] == EOS || count == 0) {
                return corrupt(format!("node {node} is a dangling non-terminal"));
            }
            if count == 0 {
                continue;
            }
            if first <= node as u64 || first + count > n as u64 {
                return corrupt(format!("node {node} has children out of range"));
            }
            let range = self.child_range(node);
            for c in range.clone() {
                if std::mem::replace(&mut seen[c], true) {
                    return corrupt(format!("node {c} has two parents"));
                }
            }
            if self.tokens[range].windows(2).any(|w| w[0].cmp(&w[1]) != Ordering::Less) {
                return corrupt(format!("children of node {node} are not strictly sorted"));
            }
        }
        if seen.iter().any(|s| !s) {
            return corrupt("unreachable nodes".into());
        }
        if terminals != self.entity_count {
            return corrupt(format!("entity count {} but {terminals} terminals", self.entity_count));
        }
        Ok(())
    }
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), TrieError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TrieError::Truncated,
        _ => TrieError::Io(e),
    })
}

struct CrcWriter<W> {
    inner: W,
    crc: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.crc.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocabulary;
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashSet};

    const MANCHESTER: [&str; 4] = [
        "Manchester United F.C.",
        "Manchester City F.C.",
        "Manchester City W.F.C",
        "City College Manchester",
    ];

    fn manchester() -> (Vocabulary, EntityTrie) {
        let vocab = Vocabulary::build(MANCHESTER, 1000).unwrap();
        let names: Vec<TokenSeq> = MANCHESTER.iter().map(|n| vocab.tokenize(n)).collect();
        let trie = EntityTrie::build(vocab.hash(), &names).unwrap();
        (vocab, trie)
    }

    fn ids(vocab: &Vocabulary, words: &[&str]) -> Vec<TokenId> {
        words.iter().map(|w| vocab.word_id(w).unwrap()).collect()
    }

    fn sorted(v: &Vocabulary, words: &[&str]) -> Vec<TokenId> {
        let mut out = ids(v, words);
        out.sort_unstable();
        out
    }

    #[test]
    fn manchester_continuations() {
        let (v, t) = manchester();
        assert_eq!(t.entity_count(), 4);
        assert_eq!(t.allowed_continuations(&[]).unwrap(), sorted(&v, &["Manchester", "City"]));
        assert_eq!(
            t.allowed_continuations(&ids(&v, &["Manchester"])).unwrap(),
            sorted(&v, &["United", "City"])
        );
        assert_eq!(
            t.allowed_continuations(&ids(&v, &["Manchester", "City"])).unwrap(),
            sorted(&v, &["F.C.", "W.F.C"])
        );
        assert_eq!(
            t.allowed_continuations(&ids(&v, &["City", "College", "Manchester"])).unwrap(),
            &[EOS]
        );
        assert!(matches!(
            t.allowed_continuations(&ids(&v, &["United"])),
            Err(TrieError::DeadPrefix { depth: 0 })
        ));
    }

    #[test]
    fn manchester_membership() {
        let (v, t) = manchester();
        assert!(t.contains(&v.tokenize("City College Manchester")));
        assert!(!t.contains(&v.tokenize("Manchester")));
        assert!(!t.contains(&v.tokenize("Manchester City")));
        assert!(!t.contains(&v.tokenize("")));
        let other = Vocabulary::build(["x"], 100).unwrap();
        let mut foreign = v.tokenize("City College Manchester");
        foreign.vocab_hash = other.hash();
        assert!(!t.contains(&foreign));
    }

    #[test]
    fn single_and_duplicate_names() {
        let h = VocabHash([7; 32]);
        let t = EntityTrie::build_from_ids(h, [&[10u32][..]]).unwrap();
        assert_eq!(t.entity_count(), 1);
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.allowed_continuations(&[10]).unwrap(), &[EOS]);

        let t = EntityTrie::build_from_ids(h, [&[10u32, 11][..], &[10, 11][..]]).unwrap();
        assert_eq!(t.entity_count(), 1);
    }

    #[test]
    fn strict_prefix_entities_compete_through_eos() {
        let h = VocabHash([1; 32]);
        let t = EntityTrie::build_from_ids(h, [&[10u32][..], &[10, 11, 12][..]]).unwrap();
        assert_eq!(t.allowed_continuations(&[10]).unwrap(), &[EOS, 11]);
        assert!(t.contains_ids(&[10]));
        assert!(!t.contains_ids(&[10, 11]));
        assert_eq!(t.entities(), vec![vec![10], vec![10, 11, 12]]);
    }

    #[test]
    fn build_errors() {
        let v = Vocabulary::build(["a b"], 100).unwrap();
        let w = Vocabulary::build(["c"], 100).unwrap();
        let names = vec![v.tokenize("a"), w.tokenize("c")];
        assert!(matches!(EntityTrie::build(v.hash(), &names), Err(TrieError::MixedVocab { index: 1 })));
        let names = vec![v.tokenize("a"), v.tokenize("  ")];
        assert!(matches!(EntityTrie::build(v.hash(), &names), Err(TrieError::EmptySequence { index: 1 })));
    }

    #[test]
    fn children_are_emitted_depth_first() {
        let h = VocabHash([0; 32]);
        let t = EntityTrie::build_from_ids(h, [&[9u32, 8][..], &[8, 9][..]]).unwrap();
        // root, block{8,9}, children of 8 {9}, its {EOS}, children of 9 {8}, its {EOS}
        assert_eq!(t.tokens, vec![ROOT_TOKEN, 8, 9, 9, EOS, 8, EOS]);
    }

    #[test]
    fn serialization_round_trip() {
        let (_, t) = manchester();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DMTR");
        assert_eq!(buf.len(), HEADER_LEN + t.node_count() * NODE_LEN + 4);
        let back = EntityTrie::read_from(&buf[..]).unwrap();
        assert_eq!(back, t);
        // Every prefix of every entity answers identically.
        for e in t.entities() {
            for k in 0..=e.len() {
                assert_eq!(back.allowed_continuations(&e[..k]).unwrap(), t.allowed_continuations(&e[..k]).unwrap());
            }
        }

        let empty = EntityTrie::empty(VocabHash([3; 32]));
        let mut buf = Vec::new();
        empty.write_to(&mut buf).unwrap();
        let back = EntityTrie::read_from(&buf[..]).unwrap();
        assert_eq!(back.entity_count(), 0);
        assert_eq!(back.vocab_hash(), VocabHash([3; 32]));
    }

    #[test]
    fn deserialization_errors() {
        let (_, t) = manchester();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(EntityTrie::read_from(&bad[..]), Err(TrieError::BadMagic)));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(EntityTrie::read_from(&bad[..]), Err(TrieError::UnsupportedVersion(2))));

        assert!(matches!(EntityTrie::read_from(&buf[..buf.len() - 1]), Err(TrieError::Truncated)));
        assert!(matches!(EntityTrie::read_from(&buf[..10]), Err(TrieError::Truncated)));

        let mut bad = buf.clone();
        bad[HEADER_LEN + 5] ^= 0xff;
        assert!(matches!(EntityTrie::read_from(&bad[..]), Err(TrieError::Checksum)));

        let mut bad = buf.clone();
        bad.push(0);
        assert!(matches!(EntityTrie::read_from(&bad[..]), Err(TrieError::Corrupt(_))));
    }

    fn seq_strategy() -> impl Strategy<Value = Vec<Vec<TokenId>>> {
        proptest::collection::vec(proptest::collection::vec(7u32..12, 1..6), 0..40)
    }

    proptest! {
        #[test]
        fn matches_hash_set_oracle(names in seq_strategy(), queries in proptest::collection::vec(proptest::collection::vec(7u32..12, 0..6), 0..40)) {
            let t = EntityTrie::build_from_ids(VocabHash([0; 32]), names.iter().map(Vec::as_slice)).unwrap();
            let set: HashSet<&Vec<TokenId>> = names.iter().collect();
            prop_assert_eq!(t.entity_count() as usize, set.len());
            let total: usize = names.iter().map(|s| s.len() + 1).sum();
            prop_assert!(t.node_count() <= 1 + total);
            for q in names.iter().chain(&queries) {
                prop_assert_eq!(t.contains_ids(q), set.contains(q));
                let expected: BTreeSet<TokenId> = names
                    .iter()
                    .filter(|s| s.starts_with(q))
                    .map(|s| if s.len() == q.len() { EOS } else { s[q.len()] })
                    .collect();
                match t.allowed_continuations(q) {
                    Ok(got) => prop_assert_eq!(got.iter().copied().collect::<BTreeSet<_>>(), expected),
                    Err(TrieError::DeadPrefix { .. }) => prop_assert!(expected.is_empty()),
                    Err(e) => prop_assert!(false, "unexpected {e}"),
                }
            }
        }
    }
}
