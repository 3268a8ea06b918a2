//! A backend whose per-stage outcomes are fixed in advance, for exercising
//! the pipeline and the harness against known answers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::mock::mock_tokens;
use super::{Backend, BackendError, GenerationRequest, GenerationResult, GenerationTask, ModeHint};
use crate::chain::{quantize, render_chain, snap_center, Chain, FastChain, SlowChain, DEFAULT_PRECISION};
use crate::geometry::{hit, NormBBox, NormPoint};
use crate::switching::FirstTokenDist;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutput {
    Hit,
    Miss,
    /// Text that does not parse as a chain.
    Garbage,
}

impl From<bool> for StageOutput {
    fn from(hit: bool) -> Self {
        if hit {
            StageOutput::Hit
        } else {
            StageOutput::Miss
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    pub bbox: NormBBox,
    /// Outcome of grounding with no context, with a summary, and with
    /// summary plus focus. A forced slow generation uses the third.
    pub stages: [StageOutput; 3],
    pub first_token: FirstTokenDist,
}

impl ScriptEntry {
    pub fn new(bbox: NormBBox, stages: [StageOutput; 3]) -> Self {
        Self {
            bbox,
            stages,
            first_token: FirstTokenDist::new(0.3, 0.6, 0.1).expect("valid"),
        }
    }

    pub fn with_first_token(mut self, d: FirstTokenDist) -> Self {
        self.first_token = d;
        self
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: HashMap<String, ScriptEntry>,
    failures: Mutex<Option<(BackendError, usize)>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = (String, ScriptEntry)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
            ..Self::default()
        }
    }

    /// Fails the next `times` calls with `err`.
    pub fn fail_next(&self, err: BackendError, times: usize) {
        *self.failures.lock().expect("lock") = Some((err, times));
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn summary_text(uri: &str) -> String {
        format!("scripted summary of {uri}")
    }

    pub fn focus_text(uri: &str) -> String {
        format!("scripted focus on {uri}")
    }

    fn miss_point(b: &NormBBox) -> NormPoint {
        [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)]
            .into_iter()
            .map(|(x, y)| NormPoint::new(x, y).expect("corner"))
            .find(|p| !hit(*p, b))
            .unwrap_or_else(|| NormPoint::new(0.0, 0.0).expect("corner"))
    }

    fn ground(&self, req: &GenerationRequest, uri: &str, e: &ScriptEntry) -> String {
        let summary = Self::summary_text(uri);
        let focus = Self::focus_text(uri);
        let has_summary = req.prompt.contains(&summary);
        let has_focus = has_summary && req.prompt.contains(&focus);
        let slow_form = match req.mode_hint {
            ModeHint::ForceSlow => true,
            ModeHint::ForceFast => false,
            ModeHint::Free => e.first_token.p_summary() > e.first_token.p_ground(),
        };
        let stage = if has_focus || (slow_form && !has_summary) {
            2
        } else if has_summary {
            1
        } else {
            0
        };
        let (point, precision) = match e.stages[stage] {
            StageOutput::Garbage => return format!("I could not locate the element for {uri}."),
            StageOutput::Hit => snap_center(&e.bbox, DEFAULT_PRECISION)
                .unwrap_or((quantize(Self::miss_point(&e.bbox), DEFAULT_PRECISION), DEFAULT_PRECISION)),
            StageOutput::Miss => (Self::miss_point(&e.bbox), DEFAULT_PRECISION),
        };
        let chain = if slow_form {
            Chain::Slow(SlowChain::new(summary, Some(focus), point).expect("marker-free"))
        } else {
            Chain::Fast(FastChain { point })
        };
        render_chain(&chain, precision.max(DEFAULT_PRECISION))
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        {
            let mut f = self.failures.lock().expect("lock");
            if let Some((err, left)) = f.as_mut() {
                if *left > 0 {
                    *left -= 1;
                    return Err(err.clone());
                }
            }
        }
        let uri = req.screenshot.uri();
        let e = self
            .entries
            .get(uri)
            .ok_or_else(|| BackendError::UnknownScene(uri.to_string()))?;
        let full = match req.task {
            GenerationTask::Summarize => Self::summary_text(uri),
            GenerationTask::Focus => Self::focus_text(uri),
            GenerationTask::Ground => self.ground(req, uri, e),
        };
        let tokens = mock_tokens(&full);
        let n = tokens.len().min(req.max_new_tokens() as usize);
        Ok(GenerationResult {
            text: tokens[..n].concat(),
            first_token_dist: e.first_token,
            latency_ms: 10.0 * n as f64,
        })
    }

    fn health(&self) -> Result<String, BackendError> {
        Ok("scripted".into())
    }

    fn max_in_flight(&self) -> usize {
        4
    }
}
