//! `DMSCORE/1`: newline-delimited JSON, one request then one response.
//!
//! ```text
//! -> {"v":1,"vocab":"<hex>","ctx":[ids],"img":<string|null>,"prefix":[ids],"allowed":[ids]}
//! <- {"v":1,"logp":{"<id>":float,...}}   or   {"v":1,"error":"msg"}
//! ```
//!
//! Only token ids cross the wire; both sides must load the same vocabulary.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{score_next, ScoreError, ScoreRequest, Scorer};
use crate::preprocess::FlatInput;
use crate::tokenizer::{TokenId, TokenSeq, VocabHash};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub v: u32,
    pub vocab: String,
    pub ctx: Vec<TokenId>,
    pub img: Option<String>,
    pub prefix: Vec<TokenId>,
    pub allowed: Vec<TokenId>,
}

impl WireRequest {
    pub fn new(vocab: VocabHash, request: &ScoreRequest<'_>) -> Self {
        WireRequest {
            v: PROTOCOL_VERSION,
            vocab: vocab.to_string(),
            ctx: request.input.tokens.ids.clone(),
            img: request.input.image_ref.clone(),
            prefix: request.prefix.to_vec(),
            allowed: request.allowed.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireResponse {
    pub fn ok(allowed: &[TokenId], logprobs: &[f64]) -> Self {
        let logp = allowed.iter().zip(logprobs).map(|(id, lp)| (id.to_string(), *lp)).collect();
        WireResponse { v: PROTOCOL_VERSION, logp: Some(logp), error: None }
    }

    pub fn error(message: impl Into<String>) -> Self {
        WireResponse { v: PROTOCOL_VERSION, logp: None, error: Some(message.into()) }
    }

    /// Aligns the reply with `allowed`, rejecting missing or extra ids.
    pub fn into_logprobs(self, allowed: &[TokenId]) -> Result<Vec<f64>, ScoreError> {
        if self.v != PROTOCOL_VERSION {
            return Err(ScoreError::Malformed(format!("protocol version {}", self.v)));
        }
        if let Some(msg) = self.error {
            return Err(ScoreError::Remote(msg));
        }
        let mut logp = self.logp.ok_or_else(|| ScoreError::Malformed("reply has neither logp nor error".into()))?;
        let mut out = Vec::with_capacity(allowed.len());
        for &id in allowed {
            match logp.remove(&id.to_string()) {
                Some(lp) => out.push(lp),
                None => return Err(ScoreError::MissingId(id)),
            }
        }
        if let Some(extra) = logp.into_keys().next() {
            return Err(ScoreError::UnexpectedId(extra));
        }
        Ok(out)
    }
}

/// Answers requests from `reader` with `scorer` until end of input. Requests
/// that fail (bad JSON, wrong vocabulary, scorer error) get an error reply and
/// the loop continues.
pub fn serve<S, R, W>(scorer: &S, vocab: Option<VocabHash>, reader: R, mut writer: W) -> std::io::Result<u64>
where
    S: Scorer + ?Sized,
    R: BufRead,
    W: Write,
{
    let mut served = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = answer(scorer, vocab, &line);
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        served += 1;
    }
    Ok(served)
}

fn answer<S: Scorer + ?Sized>(scorer: &S, vocab: Option<VocabHash>, line: &str) -> WireResponse {
    let req: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return WireResponse::error(format!("bad request: {e}")),
    };
    if req.v != PROTOCOL_VERSION {
        return WireResponse::error(format!("unsupported protocol version {}", req.v));
    }
    let hash: VocabHash = match req.vocab.parse() {
        Ok(h) => h,
        Err(e) => return WireResponse::error(e.to_string()),
    };
    if let Some(expected) = vocab {
        if expected != hash {
            return WireResponse::error(format!("vocabulary mismatch: serving {expected}, request uses {hash}"));
        }
    }
    if req.allowed.windows(2).any(|w| w[0] >= w[1]) {
        return WireResponse::error("allowed ids must be strictly ascending");
    }
    let mut input = FlatInput::from_tokens(TokenSeq::new(req.ctx, hash));
    input.image_ref = req.img;
    let request = ScoreRequest { input: &input, prefix: &req.prefix, allowed: &req.allowed };
    match score_next(scorer, &request) {
        Ok(r) => WireResponse::ok(&req.allowed, &r.logprobs),
        Err(e) => WireResponse::error(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::MockScorer;

    #[test]
    fn request_wire_shape() {
        let input = FlatInput::from_tokens(TokenSeq::new(vec![9, 10], VocabHash([0xab; 32])));
        let req = WireRequest::new(VocabHash([0xab; 32]), &ScoreRequest { input: &input, prefix: &[4], allowed: &[2, 11] });
        let json = serde_json::to_string(&req).unwrap();
        assert_eq!(
            json,
            format!(r#"{{"v":1,"vocab":"{}","ctx":[9,10],"img":null,"prefix":[4],"allowed":[2,11]}}"#, "ab".repeat(32))
        );
    }

    #[test]
    fn response_alignment_errors() {
        let r: WireResponse = serde_json::from_str(r#"{"v":1,"logp":{"3":-0.5}}"#).unwrap();
        assert!(matches!(r.into_logprobs(&[3, 5]), Err(ScoreError::MissingId(5))));
        let r: WireResponse = serde_json::from_str(r#"{"v":1,"logp":{"3":0.0,"4":-9.0}}"#).unwrap();
        assert!(matches!(r.into_logprobs(&[3]), Err(ScoreError::UnexpectedId(ref s)) if s == "4"));
        let r: WireResponse = serde_json::from_str(r#"{"v":1,"error":"boom"}"#).unwrap();
        assert!(matches!(r.into_logprobs(&[3]), Err(ScoreError::Remote(ref m)) if m == "boom"));
        let r: WireResponse = serde_json::from_str(r#"{"v":2,"logp":{}}"#).unwrap();
        assert!(matches!(r.into_logprobs(&[]), Err(ScoreError::Malformed(_))));
    }

    #[test]
    fn serve_loop_answers_in_order() {
        let h = VocabHash([1; 32]);
        let req = |allowed: &str| {
            format!(r#"{{"v":1,"vocab":"{h}","ctx":[],"img":null,"prefix":[],"allowed":{allowed}}}"#)
        };
        let input = format!("{}\n{}\nnot json\n{}\n", req("[7,8]"), req("[]"), req("[5]"));
        let mut out = Vec::new();
        let n = serve(&MockScorer, Some(h), input.as_bytes(), &mut out).unwrap();
        assert_eq!(n, 4);
        let replies: Vec<WireResponse> =
            String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let half = (0.5f64).ln();
        assert_eq!(replies[0].clone().into_logprobs(&[7, 8]).unwrap(), vec![-(2f64).ln(); 2]);
        assert!((replies[0].logp.as_ref().unwrap()["7"] - half).abs() < 1e-15);
        assert!(replies[1].error.is_some());
        assert!(replies[2].error.as_deref().unwrap().starts_with("bad request"));
        assert_eq!(replies[3].clone().into_logprobs(&[5]).unwrap(), vec![0.0]);

        let other = format!(r#"{{"v":1,"vocab":"{}","ctx":[],"img":null,"prefix":[],"allowed":[1]}}"#, VocabHash([2; 32]));
        let mut out = Vec::new();
        serve(&MockScorer, Some(h), format!("{other}\n").as_bytes(), &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("vocabulary mismatch"));
    }
}
