//! Next-token probability sources.
//!
//! A scorer answers one question: given the assembled input and the entity
//! tokens decoded so far, how probable is each token of the allowed
//! continuation set? Answers are normalized over that set only, so scoring a
//! whole candidate and walking the trie during beam search multiply exactly
//! the same factors.

mod external;
mod lexical;
pub mod protocol;

use thiserror::Error;

use crate::preprocess::FlatInput;
use crate::tokenizer::{TokenId, VocabHash};

pub use external::{timeout_from_env, Endpoint, ExternalScorer, DEFAULT_TIMEOUT, TIMEOUT_ENV};
pub use lexical::{LexicalParams, LexicalScorer};

/// Tolerance on `Σ exp(logprob)` around 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-3;
/// Largest log-probability accepted (rounding slack above 0).
pub const MAX_LOGPROB: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("allowed continuation set is empty")]
    EmptyAllowed,
    #[error("scorer returned {found} log-probabilities for {expected} allowed tokens")]
    LengthMismatch { expected: usize, found: usize },
    #[error("response is missing allowed token id {0}")]
    MissingId(TokenId),
    #[error("response contains token id {0} outside the allowed set")]
    UnexpectedId(String),
    #[error("response is not normalized: probabilities sum to {sum}")]
    NotNormalized { sum: f64 },
    #[error("log-probability {value} for token {id} is positive or NaN")]
    InvalidLogProb { id: TokenId, value: f64 },
    #[error("input was tokenized with vocabulary {found}, scorer expects {expected}")]
    VocabMismatch { expected: VocabHash, found: VocabHash },
    #[error("invalid scorer parameter: {0}")]
    InvalidParams(String),
    #[error("remote scorer error: {0}")]
    Remote(String),
    #[error("malformed scorer reply: {0}")]
    Malformed(String),
    #[error("scorer did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("scorer connection closed")]
    Disconnected,
    #[error("scorer connection is unusable after an earlier failure")]
    Broken,
    #[error("cannot reach scorer at {endpoint}: {source}")]
    Connect { endpoint: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One factor query: which of `allowed` follows `prefix` given `input`?
#[derive(Clone, Copy, Debug)]
pub struct ScoreRequest<'a> {
    pub input: &'a FlatInput,
    pub prefix: &'a [TokenId],
    /// Ascending, non-empty.
    pub allowed: &'a [TokenId],
}

/// Log-probabilities aligned index-for-index with the request's `allowed`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreResponse {
    pub logprobs: Vec<f64>,
}

impl ScoreResponse {
    pub fn get(&self, allowed: &[TokenId], id: TokenId) -> Option<f64> {
        allowed.binary_search(&id).ok().map(|i| self.logprobs[i])
    }

    /// Checks that the response is a proper distribution over `allowed`.
    pub fn validate(&self, allowed: &[TokenId]) -> Result<(), ScoreError> {
        if self.logprobs.len() != allowed.len() {
            return Err(ScoreError::LengthMismatch { expected: allowed.len(), found: self.logprobs.len() });
        }
        let mut sum = 0.0;
        for (&id, &lp) in allowed.iter().zip(&self.logprobs) {
            if lp.is_nan() || lp > MAX_LOGPROB {
                return Err(ScoreError::InvalidLogProb { id, value: lp });
            }
            sum += lp.exp();
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(ScoreError::NotNormalized { sum });
        }
        Ok(())
    }
}

pub trait Scorer: Send + Sync {
    /// Log-probabilities for `request.allowed`, in the same order.
    fn logprobs(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn logprobs(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        (**self).logprobs(request)
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn logprobs(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        (**self).logprobs(request)
    }
}

/// Queries `scorer` and validates the answer.
pub fn score_next<S: Scorer + ?Sized>(scorer: &S, request: &ScoreRequest<'_>) -> Result<ScoreResponse, ScoreError> {
    if request.allowed.is_empty() {
        return Err(ScoreError::EmptyAllowed);
    }
    let response = ScoreResponse { logprobs: scorer.logprobs(request)? };
    response.validate(request.allowed)?;
    Ok(response)
}

/// Uniform over the allowed set.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockScorer;

impl Scorer for MockScorer {
    fn logprobs(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        let lp = -(request.allowed.len() as f64).ln();
        Ok(vec![lp; request.allowed.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::TokenSeq;

    fn input() -> FlatInput {
        FlatInput::from_tokens(TokenSeq::new(vec![], VocabHash([0; 32])))
    }

    #[test]
    fn mock_is_uniform() {
        let inp = input();
        let allowed = [10, 11, 12, 13];
        let r = score_next(&MockScorer, &ScoreRequest { input: &inp, prefix: &[], allowed: &allowed }).unwrap();
        assert!(r.logprobs.iter().all(|&lp| lp == (0.25f64).ln()));
        let r = score_next(&MockScorer, &ScoreRequest { input: &inp, prefix: &[], allowed: &[9] }).unwrap();
        assert_eq!(r.logprobs, vec![0.0]);
        assert_eq!(r.get(&[9], 9), Some(0.0));
    }

    #[test]
    fn empty_allowed_is_rejected() {
        let inp = input();
        assert!(matches!(
            score_next(&MockScorer, &ScoreRequest { input: &inp, prefix: &[], allowed: &[] }),
            Err(ScoreError::EmptyAllowed)
        ));
    }

    #[test]
    fn validation() {
        let allowed = [1, 2];
        let half = ScoreResponse { logprobs: vec![(0.25f64).ln(), (0.25f64).ln()] };
        assert!(matches!(half.validate(&allowed), Err(ScoreError::NotNormalized { .. })));
        let pos = ScoreResponse { logprobs: vec![0.1, -10.0] };
        assert!(matches!(pos.validate(&allowed), Err(ScoreError::InvalidLogProb { id: 1, .. })));
        let short = ScoreResponse { logprobs: vec![0.0] };
        assert!(matches!(short.validate(&allowed), Err(ScoreError::LengthMismatch { .. })));
        let ok = ScoreResponse { logprobs: vec![0.0, f64::NEG_INFINITY] };
        assert!(ok.validate(&allowed).is_ok());
    }
}
