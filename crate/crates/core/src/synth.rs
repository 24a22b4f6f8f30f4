//! Seeded generators for synthetic catalogs, linking corpora, tables and
//! calibration sets. Every generator is a pure function of its seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{EntityCatalog, EntityRecord};
use crate::decoder::DevPoint;
use crate::preprocess::{MentionInstance, Span, Table, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ONSETS: [&str; 20] = ["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "x", "z", "qu"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// The `i`-th synthetic word: a capitalized run of at least two syllables,
/// injective in `i`.
pub fn word(i: usize) -> String {
    let n = ONSETS.len() * VOWELS.len();
    let mut digits = Vec::new();
    let mut x = i;
    loop {
        digits.push(x % n);
        x /= n;
        if x == 0 && digits.len() >= 2 {
            break;
        }
    }
    let mut s = String::new();
    for d in digits.into_iter().rev() {
        s.push_str(ONSETS[d / VOWELS.len()]);
        s.push_str(VOWELS[d % VOWELS.len()]);
    }
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

/// `n` distinct names of 4 to 8 words (6 on average) drawn from a lexicon
/// of `lexicon` words.
pub fn entity_names(seed: u64, n: usize, lexicon: usize) -> Vec<String> {
    let mut r = rng(seed);
    let words: Vec<String> = (0..lexicon.max(2)).map(word).collect();
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = r.gen_range(4..=8);
        let name = (0..len).map(|_| words[r.gen_range(0..words.len())].as_str()).collect::<Vec<_>>().join(" ");
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

pub fn catalog_from_names(names: &[String]) -> EntityCatalog {
    let records = names
        .iter()
        .enumerate()
        .map(|(i, n)| EntityRecord { id: format!("E{i}"), name: n.clone(), aliases: Vec::new() })
        .collect();
    EntityCatalog::from_entries(records).expect("synthetic names are unique and non-empty")
}

/// A small catalog with heavy prefix sharing: `entities` distinct names of
/// `1..=max_len` words over a lexicon of `lexicon` words.
pub fn branching_names(r: &mut impl Rng, entities: usize, max_len: usize, lexicon: usize) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(entities);
    while out.len() < entities {
        let len = r.gen_range(1..=max_len);
        let name = (0..len).map(|_| word(r.gen_range(0..lexicon))).collect::<Vec<_>>().join(" ");
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

/// A random table of single-word cells, at most `max_rows` × `max_cols`.
pub fn table(r: &mut impl Rng, max_rows: usize, max_cols: usize, lexicon: usize) -> Table {
    let cols = r.gen_range(1..=max_cols);
    let rows = r.gen_range(0..=max_rows);
    let cell = |r: &mut dyn rand::RngCore| word(r.gen_range(0..lexicon));
    let headers = (0..cols).map(|_| cell(r)).collect();
    let rows = (0..rows).map(|_| (0..cols).map(|_| cell(r)).collect()).collect();
    Table { headers, rows }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkingSpec {
    pub instances: usize,
    /// Fraction of instances whose gold is nil.
    pub nil_rate: f64,
    pub min_candidates: usize,
    pub max_candidates: usize,
}

impl Default for LinkingSpec {
    fn default() -> Self {
        LinkingSpec { instances: 1000, nil_rate: 0.0, min_candidates: 3, max_candidates: 6 }
    }
}

/// A linking corpus that a context-overlap scorer solves exactly.
#[derive(Clone, Debug)]
pub struct LinkingCorpus {
    pub catalog: EntityCatalog,
    pub instances: Vec<MentionInstance>,
    /// Filler vocabulary used in contexts; disjoint from entity words.
    pub filler: Vec<String>,
}

impl LinkingCorpus {
    /// Text for building a vocabulary that covers every word.
    pub fn vocab_corpus(&self) -> Vec<String> {
        let mut lines: Vec<String> = self.catalog.names();
        lines.extend(self.instances.iter().map(|i| i.text.clone()));
        lines
    }
}

/// Every entity has 2 or 3 words used by no other entity. A non-nil
/// instance's context contains its gold name verbatim (the mention) plus
/// filler, and no word of any distractor. A nil instance's context is
/// filler only. Candidate sets are shuffled and their first words are
/// distinct because no word is shared between entities.
pub fn linking_corpus(seed: u64, spec: &LinkingSpec) -> LinkingCorpus {
    let mut r = rng(seed);
    let n_entities = spec.instances * spec.max_candidates.max(1);
    let mut next_word = 0usize;
    let mut fresh = || {
        next_word += 1;
        word(next_word - 1)
    };
    let names: Vec<String> =
        (0..n_entities).map(|_| (0..r.gen_range(2..=3)).map(|_| fresh()).collect::<Vec<_>>().join(" ")).collect();
    let filler: Vec<String> = (0..200).map(|_| fresh().to_lowercase()).collect();
    let catalog = catalog_from_names(&names);

    let mut pool: Vec<usize> = (0..n_entities).collect();
    pool.shuffle(&mut r);
    let mut pool = pool.into_iter();
    let n_nil = (spec.instances as f64 * spec.nil_rate).round() as usize;
    let mut nil_flags: Vec<bool> = (0..spec.instances).map(|i| i < n_nil).collect();
    nil_flags.shuffle(&mut r);

    let mut instances = Vec::with_capacity(spec.instances);
    for (i, &is_nil) in nil_flags.iter().enumerate() {
        let k = r.gen_range(spec.min_candidates..=spec.max_candidates);
        let chosen: Vec<&String> = (&mut pool).take(k).map(|e| &names[e]).collect();
        let mut fill = |n: usize| (0..n).map(|_| filler[r.gen_range(0..filler.len())].clone()).collect::<Vec<_>>().join(" ");
        let before = fill(3);
        let after = fill(3);
        let (mention, gold) = if is_nil { (fill(2), None) } else { (chosen[0].clone(), Some(chosen[0].clone())) };
        let text = format!("{before} {mention} {after}");
        let start = before.len() + 1;
        let mut candidates: Vec<String> = chosen.into_iter().cloned().collect();
        candidates.shuffle(&mut r);
        instances.push(MentionInstance {
            id: format!("s{i:06}"),
            text,
            mention: Span { start, end: start + mention.len() },
            table: None,
            image_ref: None,
            candidates: Some(candidates),
            gold,
            task: Task::EntityLinking,
        });
    }
    LinkingCorpus { catalog, instances, filler }
}

/// Random calibration points with scores rounded to a coarse grid so that
/// ties occur.
pub fn dev_points(r: &mut impl Rng, n: usize) -> Vec<DevPoint> {
    (0..n)
        .map(|_| {
            let gold_is_nil = r.gen_bool(0.3);
            let top_correct = !gold_is_nil && r.gen_bool(0.7);
            let best_logscore = if r.gen_bool(0.5) {
                -(r.gen_range(0..200) as f64) / 10.0
            } else {
                -r.gen_range(0.0..20.0)
            };
            DevPoint { best_logscore, gold_is_nil, top_correct }
        })
        .collect()
}
