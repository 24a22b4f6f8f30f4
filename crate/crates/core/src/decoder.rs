//! Trie-constrained decoding of entity names, plus nil thresholding.
//!
//! A candidate's score is the sum of per-token log-probabilities along its
//! trie path, `[EOS]` included, where every factor is normalized over the
//! children of the node it leaves. Exhaustive ranking and beam search
//! therefore add the same factors in the same order, and agree exactly
//! whenever the beam is wide enough never to prune.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::CandidateSet;
use crate::eval::prf_from_counts;
use crate::preprocess::FlatInput;
use crate::scorer::{score_next, ScoreError, ScoreRequest, Scorer};
use crate::tokenizer::{TokenId, VocabError, Vocabulary, EOS};
use crate::trie::{EntityTrie, NodeId, ROOT};

pub const DEFAULT_BEAM: usize = 10;
pub const DEFAULT_MAX_LEN: usize = 64;
/// Offset added to observed scores when building the calibration grid.
pub const CALIBRATION_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("candidate {0:?} is not in the trie")]
    NotInTrie(String),
    #[error("trie is empty")]
    EmptyTrie,
    #[error("beam size must be at least 1")]
    ZeroBeam,
    #[error("no hypothesis finished within {max_len} tokens")]
    NoFinished { max_len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub beam: usize,
    pub max_len: usize,
    /// Rank by score divided by the number of factors.
    pub length_normalize: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { beam: DEFAULT_BEAM, max_len: DEFAULT_MAX_LEN, length_normalize: false }
    }
}

impl DecodeOptions {
    fn rank_score(&self, logscore: f64, factors: usize) -> f64 {
        if self.length_normalize {
            logscore / factors as f64
        } else {
            logscore
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub entity: String,
    #[serde(with = "crate::serde_ext::score")]
    pub score: f64,
}

/// Descending score, then ascending name.
pub fn ranking_order(a: &ScoredEntity, b: &ScoredEntity) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.entity.cmp(&b.entity))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logscore: f64,
    pub finished: bool,
    node: NodeId,
}

impl Hypothesis {
    fn root() -> Self {
        Hypothesis { tokens: Vec::new(), logscore: 0.0, finished: false, node: ROOT }
    }
}

/// Counters from one beam search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeStats {
    pub steps: usize,
    pub scorer_calls: usize,
    pub expansions: usize,
    pub pruned_max_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamOutput {
    pub ranking: Vec<ScoredEntity>,
    pub stats: DecodeStats,
}

fn check_vocab(input: &FlatInput, trie: &EntityTrie) -> Result<(), DecodeError> {
    if input.tokens.vocab_hash != trie.vocab_hash() {
        return Err(VocabError::HashMismatch { expected: trie.vocab_hash(), found: input.tokens.vocab_hash }.into());
    }
    Ok(())
}

/// Σ log p(y_j | y_<j, input) over `candidate` and the closing `[EOS]`.
pub fn score_candidate<S: Scorer + ?Sized>(
    scorer: &S,
    input: &FlatInput,
    candidate: &[TokenId],
    trie: &EntityTrie,
) -> Result<f64, DecodeError> {
    let not_in_trie = || DecodeError::NotInTrie(format!("{candidate:?}"));
    if !trie.contains_ids(candidate) {
        return Err(not_in_trie());
    }
    let mut node = ROOT;
    let mut total = 0.0;
    for j in 0..=candidate.len() {
        let target = candidate.get(j).copied().unwrap_or(EOS);
        let allowed = trie.children(node);
        let response = score_next(scorer, &ScoreRequest { input, prefix: &candidate[..j], allowed })?;
        let k = allowed.binary_search(&target).map_err(|_| not_in_trie())?;
        total += response.logprobs[k];
        node = trie.child_range(node).start + k;
    }
    Ok(total)
}

/// Scores every candidate and sorts them by [`ranking_order`].
pub fn rank_exhaustive<S: Scorer + ?Sized>(
    scorer: &S,
    input: &FlatInput,
    candidates: &CandidateSet,
    vocab: &Vocabulary,
    trie: &EntityTrie,
    options: &DecodeOptions,
) -> Result<Vec<ScoredEntity>, DecodeError> {
    check_vocab(input, trie)?;
    vocab.check_hash(trie.vocab_hash())?;
    let mut out = Vec::with_capacity(candidates.len());
    let mut ids = Vec::new();
    for name in candidates.candidates() {
        ids.clear();
        vocab.tokenize_into(name, &mut ids);
        let logscore = score_candidate(scorer, input, &ids, trie).map_err(|e| match e {
            DecodeError::NotInTrie(_) => DecodeError::NotInTrie(name.clone()),
            other => other,
        })?;
        out.push(ScoredEntity { entity: name.clone(), score: options.rank_score(logscore, ids.len() + 1) });
    }
    out.sort_by(ranking_order);
    Ok(out)
}

struct Expansion {
    parent: usize,
    token: TokenId,
    node: NodeId,
    logscore: f64,
    key: f64,
}

/// Constrained beam search. Each live hypothesis expands into exactly the
/// children of its trie node; hypotheses that take `[EOS]` retire into the
/// result pool without using a beam slot. Returns up to `beam` finished
/// names in [`ranking_order`].
pub fn beam_decode<S: Scorer + ?Sized>(
    scorer: &S,
    input: &FlatInput,
    trie: &EntityTrie,
    vocab: &Vocabulary,
    options: &DecodeOptions,
) -> Result<BeamOutput, DecodeError> {
    if options.beam == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    if trie.is_empty() {
        return Err(DecodeError::EmptyTrie);
    }
    check_vocab(input, trie)?;
    vocab.check_hash(trie.vocab_hash())?;

    let beam = options.beam;
    let mut stats = DecodeStats::default();
    let mut live = vec![Hypothesis::root()];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut expansions: Vec<Expansion> = Vec::new();
    let mut finished_keys: Vec<f64> = Vec::new();

    while !live.is_empty() {
        stats.steps += 1;
        expansions.clear();
        for (parent, hyp) in live.iter().enumerate() {
            let allowed = trie.children(hyp.node);
            let response = score_next(scorer, &ScoreRequest { input, prefix: &hyp.tokens, allowed })?;
            stats.scorer_calls += 1;
            let first = trie.child_range(hyp.node).start;
            for (k, (&token, &lp)) in allowed.iter().zip(&response.logprobs).enumerate() {
                stats.expansions += 1;
                let logscore = hyp.logscore + lp;
                if token == EOS {
                    finished.push(Hypothesis { tokens: hyp.tokens.clone(), logscore, finished: true, node: first + k });
                    finished_keys.push(options.rank_score(logscore, hyp.tokens.len() + 1));
                } else if hyp.tokens.len() >= options.max_len {
                    stats.pruned_max_len += 1;
                } else {
                    let key = options.rank_score(logscore, hyp.tokens.len() + 1);
                    expansions.push(Expansion { parent, token, node: first + k, logscore, key });
                }
            }
        }

        let order = |a: &Expansion, b: &Expansion| {
            b.key
                .partial_cmp(&a.key)
                .unwrap_or(Ordering::Equal)
                .then_with(|| live[a.parent].tokens.cmp(&live[b.parent].tokens))
                .then_with(|| a.token.cmp(&b.token))
        };
        if expansions.len() > beam {
            expansions.select_nth_unstable_by(beam - 1, order);
            expansions.truncate(beam);
        }
        expansions.sort_by(order);

        // Scores only fall as hypotheses grow, so once `beam` results beat
        // every live prefix nothing left can enter the top `beam`.
        if !options.length_normalize && finished_keys.len() >= beam {
            if let Some(best_live) = expansions.first() {
                let mut keys = finished_keys.clone();
                keys.select_nth_unstable_by(beam - 1, |a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
                if best_live.key < keys[beam - 1] {
                    expansions.clear();
                }
            }
        }

        live = expansions
            .iter()
            .map(|e| {
                let mut tokens = Vec::with_capacity(live[e.parent].tokens.len() + 1);
                tokens.extend_from_slice(&live[e.parent].tokens);
                tokens.push(e.token);
                Hypothesis { tokens, logscore: e.logscore, finished: false, node: e.node }
            })
            .collect();
    }

    if stats.pruned_max_len > 0 {
        log::warn!("pruned {} hypotheses longer than {} tokens", stats.pruned_max_len, options.max_len);
    }
    if finished.is_empty() {
        return Err(DecodeError::NoFinished { max_len: options.max_len });
    }
    let mut ranking = finished
        .iter()
        .map(|h| {
            Ok(ScoredEntity {
                entity: vocab.detokenize_ids(&h.tokens)?,
                score: options.rank_score(h.logscore, h.tokens.len() + 1),
            })
        })
        .collect::<Result<Vec<_>, VocabError>>()?;
    ranking.sort_by(ranking_order);
    ranking.truncate(beam);
    Ok(BeamOutput { ranking, stats })
}

/// Outcome of linking one mention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    #[serde(rename = "id")]
    pub instance_id: String,
    /// `None` is nil.
    pub prediction: Option<String>,
    #[serde(rename = "score", with = "crate::serde_ext::opt_score")]
    pub best_logscore: Option<f64>,
    pub topk: Vec<ScoredEntity>,
    #[serde(rename = "threshold", with = "crate::serde_ext::opt_score")]
    pub threshold_applied: Option<f64>,
}

impl LinkResult {
    /// Predicts the top entry of an already sorted ranking.
    pub fn from_ranking(instance_id: impl Into<String>, topk: Vec<ScoredEntity>) -> Self {
        let best = topk.first();
        LinkResult {
            instance_id: instance_id.into(),
            prediction: best.map(|b| b.entity.clone()),
            best_logscore: best.map(|b| b.score),
            topk,
            threshold_applied: None,
        }
    }

    /// Replaces the prediction with nil iff the best score is strictly below
    /// `threshold`.
    pub fn apply_nil_threshold(mut self, threshold: f64) -> Self {
        if self.best_logscore.map_or(true, |s| s < threshold) {
            self.prediction = None;
        }
        self.threshold_applied = Some(threshold);
        self
    }
}

/// One development instance as seen by calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DevPoint {
    pub best_logscore: f64,
    pub gold_is_nil: bool,
    /// Whether the top-ranked entity equals the (non-nil) gold.
    pub top_correct: bool,
}

/// Micro-F1 on `dev` when predictions scoring below `threshold` become nil.
pub fn f1_at_threshold(dev: &[DevPoint], threshold: f64) -> f64 {
    let mut tp = 0;
    let mut predicted = 0;
    let mut gold = 0;
    for p in dev {
        let keep = !(p.best_logscore < threshold);
        predicted += keep as usize;
        gold += !p.gold_is_nil as usize;
        tp += (keep && !p.gold_is_nil && p.top_correct) as usize;
    }
    prf_from_counts(tp, predicted, gold).f1
}

/// The smallest threshold maximizing micro-F1 over the grid
/// `{-inf} ∪ {s} ∪ {s + ε}` of observed best scores `s`.
pub fn calibrate_threshold(dev: &[DevPoint]) -> f64 {
    let mut points: Vec<&DevPoint> = dev.iter().filter(|p| !p.best_logscore.is_nan()).collect();
    points.sort_by(|a, b| a.best_logscore.total_cmp(&b.best_logscore));
    let n = points.len();
    let gold = points.iter().filter(|p| !p.gold_is_nil).count();
    // tp_from[i]: correct non-nil predictions among points[i..].
    let mut tp_from = vec![0usize; n + 1];
    for i in (0..n).rev() {
        tp_from[i] = tp_from[i + 1] + (!points[i].gold_is_nil && points[i].top_correct) as usize;
    }

    let mut grid = Vec::with_capacity(2 * n + 1);
    grid.push(f64::NEG_INFINITY);
    for p in &points {
        let s = p.best_logscore;
        grid.push(s);
        let bumped = s + CALIBRATION_EPSILON;
        grid.push(if bumped > s { bumped } else { s.next_up() });
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for theta in grid {
        let first_kept = points.partition_point(|p| p.best_logscore < theta);
        let f1 = prf_from_counts(tp_from[first_kept], n - first_kept, gold).f1;
        if f1 > best.1 {
            best = (theta, f1);
        }
    }
    best.0
}
