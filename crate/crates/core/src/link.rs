//! The per-instance linking pipeline and the results file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{CandidateSet, EntityCatalog};
use crate::decoder::{beam_decode, rank_exhaustive, DecodeOptions, DevPoint, LinkResult};
use crate::error::Error;
use crate::normalize::normalize_name;
use crate::preprocess::{assemble_input, AssembleOptions, MentionInstance, Task};
use crate::scorer::Scorer;
use crate::tokenizer::{TokenSeq, VocabHash, Vocabulary};
use crate::trie::EntityTrie;

pub const RESULTS_FORMAT: &str = "DMRESULTS/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Trie-constrained beam search.
    #[default]
    Beam,
    /// Score every candidate; keep the best `beam`.
    Exhaustive,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkOptions {
    pub decode: DecodeOptions,
    pub assemble: AssembleOptions,
    pub threshold: Option<f64>,
    pub mode: SearchMode,
}

/// Builds the trie over a candidate list.
pub fn candidate_trie(vocab: &Vocabulary, candidates: &[String]) -> Result<EntityTrie, Error> {
    let seqs: Vec<TokenSeq> = candidates.iter().map(|c| vocab.tokenize(c)).collect();
    Ok(EntityTrie::build(vocab.hash(), &seqs)?)
}

/// Links mention instances against explicit candidates, a schema-derived
/// candidate space, or the whole catalog.
pub struct Linker<'a> {
    vocab: &'a Vocabulary,
    scorer: &'a dyn Scorer,
    options: LinkOptions,
    catalog: Option<(CandidateSet, EntityTrie)>,
    schema: Option<(CandidateSet, EntityTrie)>,
}

impl<'a> Linker<'a> {
    pub fn new(vocab: &'a Vocabulary, scorer: &'a dyn Scorer, options: LinkOptions) -> Result<Self, Error> {
        if options.decode.beam == 0 {
            return Err(Error::Precondition("beam size must be at least 1".into()));
        }
        Ok(Linker { vocab, scorer, options, catalog: None, schema: None })
    }

    /// Candidate space for instances without explicit candidates. Pass a
    /// prebuilt trie to skip rebuilding it from the catalog names.
    pub fn with_catalog(mut self, catalog: &EntityCatalog, trie: Option<EntityTrie>) -> Result<Self, Error> {
        if catalog.is_empty() {
            return Ok(self);
        }
        let names = CandidateSet::new("catalog", catalog.names(), true)?;
        let trie = match trie {
            Some(t) => {
                self.vocab.check_hash(t.vocab_hash())?;
                t
            }
            None => candidate_trie(self.vocab, names.candidates())?,
        };
        self.catalog = Some((names, trie));
        Ok(self)
    }

    /// Candidate space for schema-linking instances without explicit candidates.
    pub fn with_schema_candidates(mut self, candidates: CandidateSet) -> Result<Self, Error> {
        let trie = candidate_trie(self.vocab, candidates.candidates())?;
        self.schema = Some((candidates, trie));
        Ok(self)
    }

    pub fn options(&self) -> &LinkOptions {
        &self.options
    }

    pub fn vocab_hash(&self) -> VocabHash {
        self.vocab.hash()
    }

    pub fn link_one(&self, instance: &MentionInstance) -> Result<LinkResult, Error> {
        let wrap = |e: Error| Error::in_instance(&instance.id, e);
        let input = assemble_input(instance, self.vocab, &self.options.assemble).map_err(|e| wrap(e.into()))?;

        let owned;
        let (candidates, trie) = match (&instance.candidates, instance.task, &self.schema, &self.catalog) {
            (Some(c), ..) => {
                let set = CandidateSet::new(instance.id.clone(), c.clone(), true).map_err(|e| wrap(e.into()))?;
                let trie = candidate_trie(self.vocab, set.candidates()).map_err(wrap)?;
                owned = (set, trie);
                (&owned.0, &owned.1)
            }
            (None, Task::SchemaLinking, Some((set, trie)), _) => (set, trie),
            (None, _, _, Some((set, trie))) => (set, trie),
            (None, ..) => {
                return Err(wrap(Error::Precondition("no explicit candidates and no catalog or schema".into())));
            }
        };

        let decode = &self.options.decode;
        let mut topk = match self.options.mode {
            SearchMode::Beam => beam_decode(self.scorer, &input, trie, self.vocab, decode).map(|o| o.ranking),
            SearchMode::Exhaustive => rank_exhaustive(self.scorer, &input, candidates, self.vocab, trie, decode),
        }
        .map_err(|e| wrap(e.into()))?;
        topk.truncate(decode.beam);

        let result = LinkResult::from_ranking(instance.id.clone(), topk);
        Ok(match self.options.threshold {
            Some(theta) => result.apply_nil_threshold(theta),
            None => result,
        })
    }

    /// Links every instance and returns results sorted by instance id.
    /// `jobs > 1` decodes instances in parallel; the output does not depend
    /// on it. On failure the error of the smallest failing id is returned.
    pub fn link_all(&self, instances: &[MentionInstance], jobs: usize) -> Result<Vec<LinkResult>, Error> {
        let mut order: Vec<&MentionInstance> = instances.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));
        let outcomes: Vec<Result<LinkResult, Error>> = if jobs > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::Precondition(format!("cannot start {jobs} worker threads: {e}")))?;
            pool.install(|| order.par_iter().map(|i| self.link_one(i)).collect())
        } else {
            order.iter().map(|i| self.link_one(i)).collect()
        };
        outcomes.into_iter().collect()
    }
}

/// Calibration inputs from unthresholded dev results.
pub fn dev_points(results: &[LinkResult], dataset: &[MentionInstance]) -> Result<Vec<DevPoint>, Error> {
    let gold: std::collections::HashMap<&str, Option<String>> =
        dataset.iter().map(|i| (i.id.as_str(), i.gold.as_deref().map(normalize_name))).collect();
    results
        .iter()
        .filter_map(|r| r.best_logscore.map(|s| (r, s)))
        .map(|(r, score)| {
            let g = gold
                .get(r.instance_id.as_str())
                .ok_or_else(|| Error::Precondition(format!("result id {:?} does not occur in the dataset", r.instance_id)))?;
            let top = r.topk.first().map(|t| normalize_name(&t.entity));
            Ok(DevPoint { best_logscore: score, gold_is_nil: g.is_none(), top_correct: g.is_some() && top == *g })
        })
        .collect()
}

/// First line of a results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub format: String,
    pub vocab: String,
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ResultsHeader,
}

pub fn write_results<W: Write>(mut w: W, header: &ResultsHeader, results: &[LinkResult]) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &HeaderLine { header: header.clone() })?;
    w.write_all(b"\n")?;
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_results(path: &Path, header: &ResultsHeader, results: &[LinkResult]) -> Result<(), Error> {
    let mut buf = Vec::new();
    write_results(BufWriter::new(&mut buf), header, results).map_err(|e| Error::io("serializing results", e))?;
    crate::eval::write_atomic(path, &buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a results file; the header line is optional.
pub fn read_results<R: BufRead>(r: R) -> Result<(Option<ResultsHeader>, Vec<LinkResult>), Error> {
    let mut header = None;
    let mut results = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("reading results", e))?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.trim_start().starts_with("{\"header\"") {
            let h: HeaderLine = serde_json::from_str(&line).map_err(|e| Error::json("results header", e))?;
            if h.header.format != RESULTS_FORMAT {
                return Err(Error::Precondition(format!("unsupported results format {:?}", h.header.format)));
            }
            header = Some(h.header);
            continue;
        }
        results.push(serde_json::from_str(&line).map_err(|e| Error::json(format!("results line {}", i + 1), e))?);
    }
    Ok((header, results))
}

pub fn load_results(path: &Path) -> Result<(Option<ResultsHeader>, Vec<LinkResult>), Error> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_results(BufReader::new(f))
}
