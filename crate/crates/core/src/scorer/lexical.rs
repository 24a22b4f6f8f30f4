use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{ScoreError, ScoreRequest, Scorer};
use crate::normalize::casefold;
use crate::tokenizer::{TokenId, TokenKind, TokenSeq, Vocabulary, EOS, M_START};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexicalParams {
    /// Weight of the bigram component; the context component gets `1 - lambda`.
    pub lambda: f64,
    /// Boost for tokens whose case-folded surface occurs in the context.
    pub alpha: f64,
    /// Add-k smoothing constant.
    pub k: f64,
}

impl Default for LexicalParams {
    fn default() -> Self {
        LexicalParams { lambda: 0.5, alpha: 2.0, k: 0.1 }
    }
}

impl LexicalParams {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ScoreError::InvalidParams(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if !(self.alpha >= 0.0) {
            return Err(ScoreError::InvalidParams(format!("alpha {} is negative", self.alpha)));
        }
        if !(self.k > 0.0) {
            return Err(ScoreError::InvalidParams(format!("k {} must be positive", self.k)));
        }
        Ok(())
    }
}

/// Reference scorer mixing an add-k bigram model over entity names with a
/// context-overlap bonus:
///
/// ```text
/// P(t | prefix, ctx) ∝ λ·(c(p,t)+k)/(c(p)+k·V) + (1−λ)·softmax_allowed(α·[fold(t) ∈ fold(ctx)])
/// ```
///
/// where `p` is the last prefix token (`[M_START]` at the first position).
#[derive(Clone, Debug)]
pub struct LexicalScorer {
    params: LexicalParams,
    vocab_size: f64,
    bigrams: HashMap<(TokenId, TokenId), u64>,
    unigrams: HashMap<TokenId, u64>,
    /// Case-folded surface class per token id; `None` for specials.
    fold_class: Vec<Option<u32>>,
}

impl LexicalScorer {
    /// Counts bigrams over `names`, each read as `[M_START] name [EOS]`.
    pub fn new(vocab: &Vocabulary, names: &[TokenSeq], params: LexicalParams) -> Result<Self, ScoreError> {
        params.validate()?;
        if names.is_empty() {
            return Err(ScoreError::InvalidParams("no training sequences".into()));
        }
        let mut bigrams = HashMap::new();
        let mut unigrams = HashMap::new();
        for seq in names {
            vocab
                .check_hash(seq.vocab_hash)
                .map_err(|_| ScoreError::VocabMismatch { expected: vocab.hash(), found: seq.vocab_hash })?;
            let mut prev = M_START;
            for &t in seq.ids.iter().chain(std::iter::once(&EOS)) {
                *bigrams.entry((prev, t)).or_insert(0) += 1;
                *unigrams.entry(prev).or_insert(0) += 1;
                prev = t;
            }
        }

        let mut classes: HashMap<String, u32> = HashMap::new();
        let fold_class = (0..vocab.len() as TokenId)
            .map(|id| match vocab.kind(id) {
                Some(TokenKind::Special(_)) | None => None,
                Some(_) => {
                    let folded = casefold(vocab.token(id).unwrap_or_default());
                    let next = classes.len() as u32;
                    Some(*classes.entry(folded).or_insert(next))
                }
            })
            .collect();

        Ok(LexicalScorer { params, vocab_size: vocab.len() as f64, bigrams, unigrams, fold_class })
    }

    pub fn params(&self) -> LexicalParams {
        self.params
    }

    fn class(&self, id: TokenId) -> Option<u32> {
        self.fold_class.get(id as usize).copied().flatten()
    }
}

impl Scorer for LexicalScorer {
    fn logprobs(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        let LexicalParams { lambda, alpha, k } = self.params;
        let prev = request.prefix.last().copied().unwrap_or(M_START);
        let prev_count = self.unigrams.get(&prev).copied().unwrap_or(0) as f64;
        let denom = prev_count + k * self.vocab_size;

        let ctx: HashSet<u32> = request.input.tokens.ids.iter().filter_map(|&t| self.class(t)).collect();
        let boost: Vec<f64> = request
            .allowed
            .iter()
            .map(|&t| {
                let hit = self.class(t).is_some_and(|c| ctx.contains(&c));
                (alpha * if hit { 1.0 } else { 0.0 }).exp()
            })
            .collect();
        let boost_sum: f64 = boost.iter().sum();

        let mixed: Vec<f64> = request
            .allowed
            .iter()
            .zip(&boost)
            .map(|(&t, &b)| {
                let count = self.bigrams.get(&(prev, t)).copied().unwrap_or(0) as f64;
                lambda * (count + k) / denom + (1.0 - lambda) * b / boost_sum
            })
            .collect();
        let total: f64 = mixed.iter().sum();
        Ok(mixed.into_iter().map(|m| (m / total).ln()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::FlatInput;
    use crate::scorer::score_next;

    const MANCHESTER: [&str; 4] = [
        "Manchester United F.C.",
        "Manchester City F.C.",
        "Manchester City W.F.C",
        "City College Manchester",
    ];

    fn setup(params: LexicalParams) -> (Vocabulary, LexicalScorer) {
        let vocab = Vocabulary::build(MANCHESTER.iter().copied().chain(["supporters of the club"]), 1000).unwrap();
        let names: Vec<TokenSeq> = MANCHESTER.iter().map(|n| vocab.tokenize(n)).collect();
        let scorer = LexicalScorer::new(&vocab, &names, params).unwrap();
        (vocab, scorer)
    }

    fn probs(scorer: &LexicalScorer, input: &FlatInput, prefix: &[TokenId], allowed: &[TokenId]) -> Vec<f64> {
        let r = score_next(scorer, &ScoreRequest { input, prefix, allowed }).unwrap();
        r.logprobs.iter().map(|lp| lp.exp()).collect()
    }

    #[test]
    fn parameter_checks() {
        let vocab = Vocabulary::build(["a"], 100).unwrap();
        let names = vec![vocab.tokenize("a")];
        for bad in [
            LexicalParams { lambda: 1.5, ..Default::default() },
            LexicalParams { alpha: -0.1, ..Default::default() },
            LexicalParams { k: 0.0, ..Default::default() },
        ] {
            assert!(matches!(LexicalScorer::new(&vocab, &names, bad), Err(ScoreError::InvalidParams(_))));
        }
        assert!(LexicalScorer::new(&vocab, &[], LexicalParams::default()).is_err());
    }

    #[test]
    fn context_only_single_hit() {
        // λ = 0, α = 2, one of two allowed tokens in context: e²/(e²+1).
        let (v, s) = setup(LexicalParams { lambda: 0.0, alpha: 2.0, k: 0.1 });
        let input = FlatInput::from_tokens(v.tokenize("supporters of City"));
        let city = v.word_id("City").unwrap();
        let man = v.word_id("Manchester").unwrap();
        let mut allowed = vec![city, man];
        allowed.sort_unstable();
        let p = probs(&s, &input, &[], &allowed);
        let p_city = p[allowed.iter().position(|&t| t == city).unwrap()];
        let e2 = 2.0f64.exp();
        assert!((p_city - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((p_city - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn context_only_no_hit_is_uniform() {
        let (v, s) = setup(LexicalParams { lambda: 0.0, ..Default::default() });
        let input = FlatInput::from_tokens(v.tokenize("supporters of the club"));
        let allowed: Vec<TokenId> = {
            let mut a = vec![v.word_id("City").unwrap(), v.word_id("Manchester").unwrap(), v.word_id("United").unwrap()];
            a.sort_unstable();
            a
        };
        for p in probs(&s, &input, &[], &allowed) {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn heavy_smoothing_approaches_uniform() {
        let (v, s) = setup(LexicalParams { lambda: 1.0, alpha: 2.0, k: 1e9 });
        let input = FlatInput::from_tokens(v.tokenize("City"));
        let mut allowed = vec![v.word_id("City").unwrap(), v.word_id("Manchester").unwrap()];
        allowed.sort_unstable();
        for p in probs(&s, &input, &[], &allowed) {
            assert!((p - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn manchester_root_prefers_context_word() {
        // Hand evaluation at the root, defaults λ=0.5 α=2 k=0.1, V = |vocab|:
        //   bigram from [M_START]: Manchester 3/4, City 1/4 (plus smoothing)
        //   context "supporters of City" hits City only.
        let (v, s) = setup(LexicalParams::default());
        let input = FlatInput::from_tokens(v.tokenize("supporters of City"));
        let city = v.word_id("City").unwrap();
        let man = v.word_id("Manchester").unwrap();
        let mut allowed = vec![city, man];
        allowed.sort_unstable();

        let vsize = v.len() as f64;
        let denom = 4.0 + 0.1 * vsize;
        let e2 = 2.0f64.exp();
        let m_city = 0.5 * (1.0 + 0.1) / denom + 0.5 * e2 / (e2 + 1.0);
        let m_man = 0.5 * (3.0 + 0.1) / denom + 0.5 * 1.0 / (e2 + 1.0);
        let expect_city = m_city / (m_city + m_man);

        let p = probs(&s, &input, &[], &allowed);
        let idx = |t| allowed.iter().position(|&x| x == t).unwrap();
        assert!((p[idx(city)] - expect_city).abs() < 1e-12);
        assert!(p[idx(city)] > p[idx(man)]);
    }

    #[test]
    fn deterministic_bits() {
        let (v, s) = setup(LexicalParams::default());
        let (_, s2) = setup(LexicalParams::default());
        let input = FlatInput::from_tokens(v.tokenize("City College"));
        let prefix = [v.word_id("Manchester").unwrap()];
        let mut allowed = vec![v.word_id("City").unwrap(), v.word_id("United").unwrap(), EOS];
        allowed.sort_unstable();
        let a = s.logprobs(&ScoreRequest { input: &input, prefix: &prefix, allowed: &allowed }).unwrap();
        let b = s2.logprobs(&ScoreRequest { input: &input, prefix: &prefix, allowed: &allowed }).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}
