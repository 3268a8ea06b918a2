//! Model backends: the generation contract, prompt construction, and the
//! concrete HTTP, mock and scripted implementations.

mod http;
mod mock;
mod prompt;
mod scripted;
pub mod wire;

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ScreenshotRef;
use crate::switching::FirstTokenDist;

pub use http::{HttpBackend, BACKEND_URL_ENV, DEFAULT_ENDPOINT};
pub use mock::{
    mock_tokens, ErrorModel, FirstTokenModel, LatencyModel, MockBackend, SuccessCurve,
    DEFAULT_MOCK_PRECISION,
};
pub use prompt::{build_prompt, PromptContext, PromptError, PromptStage, PromptTemplateSet};
pub use scripted::{ScriptEntry, ScriptedBackend, StageOutput};

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 4096;
/// Room for the shortest complete grounding segment.
pub const MIN_NEW_TOKENS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeHint {
    Free,
    ForceFast,
    ForceSlow,
}

impl ModeHint {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeHint::Free => "free",
            ModeHint::ForceFast => "force_fast",
            ModeHint::ForceSlow => "force_slow",
        }
    }
}

/// What the caller wants out of a generation. Not part of the wire format:
/// remote models infer it from the prompt, in-process backends read it here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationTask {
    Ground,
    Summarize,
    Focus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub screenshot: ScreenshotRef,
    pub prompt: String,
    pub task: GenerationTask,
    pub mode_hint: ModeHint,
    max_new_tokens: u32,
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(
        screenshot: ScreenshotRef,
        prompt: impl Into<String>,
        task: GenerationTask,
        mode_hint: ModeHint,
    ) -> Self {
        Self {
            screenshot,
            prompt: prompt.into(),
            task,
            mode_hint,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            seed: None,
        }
    }

    pub fn with_max_new_tokens(mut self, n: u32) -> Result<Self, BackendError> {
        if n < MIN_NEW_TOKENS {
            return Err(BackendError::InvalidRequest(format!(
                "max_new_tokens {n} below minimum {MIN_NEW_TOKENS}"
            )));
        }
        self.max_new_tokens = n;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_new_tokens(&self) -> u32 {
        self.max_new_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub text: String,
    pub first_token_dist: FirstTokenDist,
    pub latency_ms: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model returned an empty generation")]
    ModelRefusal,
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Errors worth retrying: the same request may succeed later.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Unavailable(_) | BackendError::Timeout)
    }
}

/// A grounding model behind the generation contract.
///
/// Implementations must tolerate `max_in_flight()` concurrent calls.
pub trait Backend: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError>;

    /// Returns the served model name.
    fn health(&self) -> Result<String, BackendError>;

    fn max_in_flight(&self) -> usize {
        1
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(req)
    }

    fn health(&self) -> Result<String, BackendError> {
        (**self).health()
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(req)
    }

    fn health(&self) -> Result<String, BackendError> {
        (**self).health()
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

/// Retries transient backend failures with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            base_delay: Duration::ZERO,
        }
    }

    pub fn run<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    let delay = self.base_delay.saturating_mul(1 << attempt.min(16));
                    log::debug!("retrying after {e} (attempt {}, sleeping {delay:?})", attempt + 1);
                    thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

impl fmt::Display for GenerationTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenerationTask::Ground => "ground",
            GenerationTask::Summarize => "summarize",
            GenerationTask::Focus => "focus",
        })
    }
}
