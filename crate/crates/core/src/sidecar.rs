//! Client for the model sidecar: MLM priors, tokenization and sentence
//! similarity over JSON/HTTP.
//!
//! Every request and response body is a single JSON document carrying
//! `"version": "v1"`. Endpoints:
//!
//! | method | path             | request                    | response                         |
//! |--------|------------------|----------------------------|----------------------------------|
//! | GET    | `/v1/health`     | -                          | [`HealthResponse`]               |
//! | POST   | `/v1/mlm`        | [`MlmRequest`]             | [`MlmResponse`]                  |
//! | POST   | `/v1/tokenize`   | [`TokenizeRequest`]        | [`TokenizeResponse`]             |
//! | POST   | `/v1/detokenize` | [`DetokenizeRequest`]      | [`DetokenizeResponse`]           |
//! | POST   | `/v1/embed_sim`  | [`EmbedSimRequest`]        | [`EmbedSimResponse`]             |
//!
//! Full-vocabulary log-probabilities travel as base64 of little-endian `f32`.
//! Errors use a non-2xx status and an [`ErrorResponse`] body.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::TokenId;

pub const PROTOCOL_VERSION: &str = "v1";

/// Tolerance on `logsumexp` of a returned distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SidecarError {
    #[error("sidecar unreachable: {0}")]
    Transport(String),
    #[error("sidecar returned status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed sidecar response: {0}")]
    Protocol(String),
}

impl SidecarError {
    fn is_retryable(&self) -> bool {
        matches!(self, SidecarError::Transport(_))
    }
}

fn version() -> String {
    PROTOCOL_VERSION.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmQuery {
    /// Token ids, with `[MASK]` encoded as the model's mask id.
    pub ids: Vec<TokenId>,
    /// Positions to answer; each holds the mask id.
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmRequest {
    #[serde(default = "version")]
    pub version: String,
    /// 0 requests the full vocabulary.
    pub top_k: usize,
    pub queries: Vec<MlmQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LogProbPayload {
    Full {
        /// base64 of `V` little-endian `f32` natural-log probabilities.
        log_probs_f32le_b64: String,
    },
    TopK {
        top_ids: Vec<TokenId>,
        top_log_probs: Vec<f32>,
        /// `log` of the mass outside `top_ids`; absent when `k == V`.
        residual_log_mass: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionResult {
    pub position: usize,
    #[serde(flatten)]
    pub payload: LogProbPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmResponse {
    pub version: String,
    pub vocab_size: usize,
    /// One list per query, one entry per queried position.
    pub results: Vec<Vec<PositionResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizeRequest {
    #[serde(default = "version")]
    pub version: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizeResponse {
    pub version: String,
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetokenizeRequest {
    #[serde(default = "version")]
    pub version: String,
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetokenizeResponse {
    pub version: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSimRequest {
    #[serde(default = "version")]
    pub version: String,
    pub text_a: String,
    pub text_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSimResponse {
    pub version: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthResponse {
    pub version: String,
    pub status: String,
    pub vocab_size: usize,
    pub mask_token_id: TokenId,
    pub mlm_model: String,
    pub embedding_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub version: String,
    pub error: ErrorBody,
}

/// Decodes one position's payload into `V` natural-log probabilities,
/// validating normalization.
pub fn decode_log_probs(payload: &LogProbPayload, vocab_size: usize) -> Result<Vec<f64>, SidecarError> {
    let out = match payload {
        LogProbPayload::Full { log_probs_f32le_b64 } => {
            let bytes = B64
                .decode(log_probs_f32le_b64)
                .map_err(|e| SidecarError::Protocol(format!("bad base64: {e}")))?;
            if bytes.len() != 4 * vocab_size {
                return Err(SidecarError::Protocol(format!(
                    "{} payload bytes for vocabulary of {vocab_size}",
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect::<Vec<_>>()
        }
        LogProbPayload::TopK {
            top_ids,
            top_log_probs,
            residual_log_mass,
        } => {
            if top_ids.len() != top_log_probs.len() || top_ids.is_empty() || top_ids.len() > vocab_size {
                return Err(SidecarError::Protocol("inconsistent top-k lengths".into()));
            }
            let rest = vocab_size - top_ids.len();
            let fill = match (rest, residual_log_mass) {
                (0, _) => f64::NEG_INFINITY,
                (_, Some(r)) => r - (rest as f64).ln(),
                (_, None) => return Err(SidecarError::Protocol("missing residual_log_mass".into())),
            };
            let mut out = vec![fill; vocab_size];
            let mut seen = vec![false; vocab_size];
            for (&id, &lp) in top_ids.iter().zip(top_log_probs) {
                let slot = id as usize;
                if slot >= vocab_size || seen[slot] {
                    return Err(SidecarError::Protocol(format!("bad or repeated top-k id {id}")));
                }
                seen[slot] = true;
                out[slot] = f64::from(lp);
            }
            out
        }
    };
    if out.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(SidecarError::Protocol("NaN or +inf log-probability".into()));
    }
    let lse = logsumexp(&out);
    if (lse).abs() > NORMALIZATION_TOLERANCE {
        return Err(SidecarError::Protocol(format!("distribution not normalized: logsumexp = {lse}")));
    }
    Ok(out)
}

/// Encodes log-probabilities as the full-vocabulary payload.
pub fn encode_full(log_probs: &[f64]) -> LogProbPayload {
    let bytes: Vec<u8> = log_probs.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    LogProbPayload::Full {
        log_probs_f32le_b64: B64.encode(bytes),
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SidecarConfig {
    pub url: String,
    pub timeout_ms: u64,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Cap on concurrent requests from this client.
    pub max_in_flight: usize,
    /// Maximum MLM queries per request.
    pub max_batch: usize,
}

impl Default for SidecarConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8765".into(),
            timeout_ms: 30_000,
            retries: 2,
            backoff_ms: 200,
            max_in_flight: 4,
            max_batch: 256,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InFlight {
    cap: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            busy: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= self.cap {
            busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut busy = self.0.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking, timeout-guarded sidecar client. Safe to share across threads.
#[derive(Debug)]
pub struct SidecarClient {
    config: SidecarConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl SidecarClient {
    pub fn new(config: SidecarConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = InFlight::new(config.max_in_flight);
        Self {
            config,
            agent,
            in_flight,
        }
    }

    pub fn config(&self) -> &SidecarConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.url.trim_end_matches('/'), path)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, SidecarError>) -> Result<T, SidecarError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.in_flight.acquire();
                call()
            };
            match result {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(self.config.backoff_ms * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }

    fn read<T: DeserializeOwned>(mut resp: ureq::http::Response<ureq::Body>) -> Result<T, SidecarError> {
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| SidecarError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<ErrorResponse>(&body)
                .map(|e| format!("{}: {}", e.error.code, e.error.message))
                .unwrap_or(body);
            return Err(SidecarError::Status { status, message });
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| SidecarError::Protocol(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_str()) {
            Some(PROTOCOL_VERSION) => {}
            other => {
                return Err(SidecarError::Protocol(format!(
                    "expected version {PROTOCOL_VERSION}, got {other:?}"
                )))
            }
        }
        serde_json::from_value(value).map_err(|e| SidecarError::Protocol(e.to_string()))
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, SidecarError> {
        let url = self.url(path);
        let payload = serde_json::to_string(body).map_err(|e| SidecarError::Protocol(e.to_string()))?;
        self.with_retries(|| {
            let resp = self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(payload.as_str())
                .map_err(|e| SidecarError::Transport(e.to_string()))?;
            Self::read(resp)
        })
    }

    pub fn health(&self) -> Result<HealthResponse, SidecarError> {
        let url = self.url("/v1/health");
        let health: HealthResponse = self.with_retries(|| {
            let resp = self
                .agent
                .get(&url)
                .call()
                .map_err(|e| SidecarError::Transport(e.to_string()))?;
            Self::read(resp)
        })?;
        if health.status != "ok" {
            return Err(SidecarError::Status {
                status: 503,
                message: format!("sidecar reports status {}", health.status),
            });
        }
        Ok(health)
    }

    pub fn mlm(&self, request: &MlmRequest) -> Result<MlmResponse, SidecarError> {
        let resp: MlmResponse = self.post("/v1/mlm", request)?;
        if resp.results.len() != request.queries.len() {
            return Err(SidecarError::Protocol(format!(
                "{} results for {} queries",
                resp.results.len(),
                request.queries.len()
            )));
        }
        for (q, r) in request.queries.iter().zip(&resp.results) {
            let got: Vec<usize> = r.iter().map(|p| p.position).collect();
            if got != q.positions {
                return Err(SidecarError::Protocol(format!(
                    "answered positions {got:?}, asked {:?}",
                    q.positions
                )));
            }
        }
        Ok(resp)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, SidecarError> {
        let resp: TokenizeResponse = self.post(
            "/v1/tokenize",
            &TokenizeRequest {
                version: version(),
                text: text.to_string(),
            },
        )?;
        Ok(resp.ids)
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, SidecarError> {
        let resp: DetokenizeResponse = self.post(
            "/v1/detokenize",
            &DetokenizeRequest {
                version: version(),
                ids: ids.to_vec(),
            },
        )?;
        Ok(resp.text)
    }

    pub fn embed_sim(&self, text_a: &str, text_b: &str) -> Result<f64, SidecarError> {
        let resp: EmbedSimResponse = self.post(
            "/v1/embed_sim",
            &EmbedSimRequest {
                version: version(),
                text_a: text_a.to_string(),
                text_b: text_b.to_string(),
            },
        )?;
        if !(-1.0 - 1e-6..=1.0 + 1e-6).contains(&resp.similarity) {
            return Err(SidecarError::Protocol(format!("similarity {} outside [-1, 1]", resp.similarity)));
        }
        Ok(resp.similarity.clamp(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normalized(logits: &[f64]) -> Vec<f64> {
        let z = logsumexp(logits);
        logits.iter().map(|x| x - z).collect()
    }

    #[test]
    fn full_payload_roundtrip() {
        let lp = normalized(&[0.3, -1.0, 2.0, 0.0, -4.0]);
        let back = decode_log_probs(&encode_full(&lp), 5).unwrap();
        for (a, b) in lp.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(matches!(
            decode_log_probs(&encode_full(&lp), 6),
            Err(SidecarError::Protocol(_))
        ));
    }

    #[test]
    fn unnormalized_payload_rejected() {
        let lp = vec![-1.0; 4];
        assert!(matches!(decode_log_probs(&encode_full(&lp), 4), Err(SidecarError::Protocol(_))));
    }

    #[test]
    fn top_k_spreads_residual_uniformly() {
        let payload = LogProbPayload::TopK {
            top_ids: vec![2, 0],
            top_log_probs: vec![0.5f32.ln(), 0.3f32.ln()],
            residual_log_mass: Some(0.2f64.ln()),
        };
        let lp = decode_log_probs(&payload, 6).unwrap();
        assert!((lp[2].exp() - 0.5).abs() < 1e-6);
        assert!((lp[0].exp() - 0.3).abs() < 1e-6);
        for v in [1, 3, 4, 5] {
            assert!((lp[v].exp() - 0.05).abs() < 1e-6);
        }
        let repeated = LogProbPayload::TopK {
            top_ids: vec![1, 1],
            top_log_probs: vec![0.5f32.ln(), 0.5f32.ln()],
            residual_log_mass: None,
        };
        assert!(decode_log_probs(&repeated, 2).is_err());
    }

    #[test]
    fn payload_json_shape() {
        let r = PositionResult {
            position: 3,
            payload: LogProbPayload::TopK {
                top_ids: vec![1],
                top_log_probs: vec![0.0],
                residual_log_mass: None,
            },
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["mode"], "top_k");
        assert_eq!(v["position"], 3);
        let back: PositionResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn unreachable_sidecar_is_transport_error() {
        // Port 9 (discard) on localhost is closed in the test environment.
        let client = SidecarClient::new(SidecarConfig {
            url: "http://127.0.0.1:9".into(),
            timeout_ms: 500,
            retries: 1,
            backoff_ms: 1,
            ..SidecarConfig::default()
        });
        assert!(matches!(client.health(), Err(SidecarError::Transport(_))));
    }
}
