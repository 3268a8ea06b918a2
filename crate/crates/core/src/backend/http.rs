use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;

use super::wire::{WireError, WireHealth, WireRequest, WireResponse, GENERATE_PATH, HEALTH_PATH};
use super::{Backend, BackendError, GenerationRequest, GenerationResult};

pub const BACKEND_URL_ENV: &str = "DUALGROUND_BACKEND_URL";
pub const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:8000";

/// Client for a model served behind the `/v1/generate` protocol.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    client: Client,
    max_in_flight: usize,
}

impl HttpBackend {
    pub fn new(endpoint: &str, timeout: Duration, max_in_flight: usize) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_string(),
            client,
            max_in_flight: max_in_flight.max(1),
        })
    }

    /// Resolves the endpoint: `DUALGROUND_BACKEND_URL` when set, else `configured`.
    pub fn resolve_endpoint(configured: Option<&str>) -> String {
        std::env::var(BACKEND_URL_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .or_else(|| configured.map(str::to_string))
            .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string())
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn map_send_error(e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout
        } else {
            BackendError::Unavailable(e.to_string())
        }
    }

    fn check_status(resp: reqwest::blocking::Response) -> Result<reqwest::blocking::Response, BackendError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().unwrap_or_default();
        let msg = serde_json::from_str::<WireError>(&body)
            .map(|e| e.error)
            .unwrap_or(body);
        Err(match status {
            StatusCode::SERVICE_UNAVAILABLE => BackendError::Unavailable(msg),
            StatusCode::UNPROCESSABLE_ENTITY => BackendError::Protocol(msg),
            StatusCode::GATEWAY_TIMEOUT | StatusCode::REQUEST_TIMEOUT => BackendError::Timeout,
            other => BackendError::Protocol(format!("HTTP {other}: {msg}")),
        })
    }
}

impl Backend for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let resp = self
            .client
            .post(format!("{}{GENERATE_PATH}", self.base))
            .json(&WireRequest::from(req))
            .send()
            .map_err(Self::map_send_error)?;
        let body = Self::check_status(resp)?
            .text()
            .map_err(Self::map_send_error)?;
        let wire: WireResponse = serde_json::from_str(&body)
            .map_err(|e| BackendError::Protocol(format!("bad response body: {e}")))?;
        GenerationResult::try_from(wire)
    }

    fn health(&self) -> Result<String, BackendError> {
        let resp = self
            .client
            .get(format!("{}{HEALTH_PATH}", self.base))
            .send()
            .map_err(Self::map_send_error)?;
        let body = Self::check_status(resp)?
            .text()
            .map_err(Self::map_send_error)?;
        let h: WireHealth = serde_json::from_str(&body)
            .map_err(|e| BackendError::Protocol(format!("bad health body: {e}")))?;
        if h.status == "ok" {
            Ok(h.model)
        } else {
            Err(BackendError::Unavailable(format!("status {:?}", h.status)))
        }
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}
