//! JSON wire format of the `/v1/generate` and `/v1/health` endpoints.

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationRequest, GenerationResult, ModeHint};
use crate::switching::FirstTokenDist;

pub const GENERATE_PATH: &str = "/v1/generate";
pub const HEALTH_PATH: &str = "/v1/health";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub screenshot_uri: String,
    pub prompt: String,
    pub mode_hint: ModeHint,
    pub max_new_tokens: u32,
    pub seed: Option<u64>,
}

impl From<&GenerationRequest> for WireRequest {
    fn from(r: &GenerationRequest) -> Self {
        Self {
            screenshot_uri: r.screenshot.uri().to_string(),
            prompt: r.prompt.clone(),
            mode_hint: r.mode_hint,
            max_new_tokens: r.max_new_tokens(),
            seed: r.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireProbs {
    pub summary_start: f64,
    pub grounding_start: f64,
    pub other: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub text: String,
    pub first_token_probs: WireProbs,
    pub latency_ms: f64,
}

impl TryFrom<WireResponse> for GenerationResult {
    type Error = BackendError;

    fn try_from(w: WireResponse) -> Result<Self, Self::Error> {
        let p = &w.first_token_probs;
        let dist = FirstTokenDist::new(p.summary_start, p.grounding_start, p.other)
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        if !(w.latency_ms >= 0.0 && w.latency_ms.is_finite()) {
            return Err(BackendError::Protocol(format!("latency_ms {}", w.latency_ms)));
        }
        if w.text.trim().is_empty() {
            return Err(BackendError::ModelRefusal);
        }
        Ok(GenerationResult {
            text: w.text,
            first_token_dist: dist,
            latency_ms: w.latency_ms,
        })
    }
}

impl From<&GenerationResult> for WireResponse {
    fn from(r: &GenerationResult) -> Self {
        Self {
            text: r.text.clone(),
            first_token_probs: WireProbs {
                summary_start: r.first_token_dist.p_summary(),
                grounding_start: r.first_token_dist.p_ground(),
                other: r.first_token_dist.p_other(),
            },
            latency_ms: r.latency_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireHealth {
    pub status: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub error: String,
}
