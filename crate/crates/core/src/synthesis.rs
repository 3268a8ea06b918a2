//! Progressive data synthesis: try fast grounding, escalate to a summary,
//! then to a focused analysis, and sort each sample by where it first hit.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    build_prompt, Backend, BackendError, GenerationRequest, GenerationTask, ModeHint,
    PromptContext, PromptError, PromptStage, PromptTemplateSet, RetryPolicy,
    DEFAULT_MAX_NEW_TOKENS,
};
use crate::chain::{
    parse_chain, render_chain, snap_center, Chain, FastChain, Precision, SegmentKind, SlowChain,
    DEFAULT_PRECISION, MARKERS,
};
use crate::dataset::{
    compute_stats, DataClass, DatasetError, DatasetStats, JsonlWriter, TrainingMetadata,
    TrainingRecord,
};
use crate::geometry::{hit, NormPoint};
use crate::par::parallel_map;
use crate::sample::{ElementKind, GroundingSample, Platform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FastAttempt,
    SummaryAttempt,
    FocusAttempt,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::FastAttempt, Stage::SummaryAttempt, Stage::FocusAttempt];

    /// 1-based stage number.
    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAttempt {
    pub stage: Stage,
    pub prompt: String,
    /// Annotator output feeding this stage, if any.
    pub annotation: Option<String>,
    pub raw_text: String,
    pub point: Option<[f64; 2]>,
    pub parse_error: Option<String>,
    pub hit: bool,
    /// Annotator plus grounder time for this stage.
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    attempts: Vec<StageAttempt>,
}

impl StageTrace {
    pub fn attempts(&self) -> &[StageAttempt] {
        &self.attempts
    }

    pub fn last(&self) -> Option<&StageAttempt> {
        self.attempts.last()
    }

    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }

    fn push(&mut self, a: StageAttempt) {
        debug_assert!(self.attempts.last().is_none_or(|l| l.stage < a.stage && !l.hit));
        self.attempts.push(a);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    FastData,
    SlowData,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOutcome {
    pub sample_id: String,
    pub class: OutcomeClass,
    pub chain: Option<Chain>,
    pub trace: StageTrace,
}

impl SynthesisOutcome {
    /// Stage at which the sample resolved.
    pub fn resolved_stage(&self) -> Option<Stage> {
        self.trace.last().filter(|a| a.hit).map(|a| a.stage)
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("sample {sample_id}: {source}")]
    Backend {
        sample_id: String,
        #[source]
        source: BackendError,
        trace: StageTrace,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("sample {0} is unresolved and has no training record")]
    Unresolved(String),
    #[error(transparent)]
    Output(#[from] DatasetError),
}

#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    pub templates: PromptTemplateSet,
    pub retry: RetryPolicy,
    pub max_new_tokens: u32,
    pub seed: Option<u64>,
    /// Minimum decimal places in exported completions.
    pub precision: Precision,
    pub parallelism: usize,
    pub progress: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            templates: PromptTemplateSet::default(),
            retry: RetryPolicy::default(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            seed: None,
            precision: DEFAULT_PRECISION,
            parallelism: 4,
            progress: false,
        }
    }
}

/// Pulls the body out of annotator text, unwrapping one marker pair if present.
fn clean_annotation(text: &str, kind: SegmentKind) -> Result<String, String> {
    let mut body = text.trim();
    if let Some(rest) = body.strip_prefix(kind.start()) {
        body = rest.strip_suffix(kind.end()).unwrap_or(rest).trim();
    }
    if body.is_empty() {
        return Err("empty annotation".into());
    }
    if MARKERS.iter().any(|m| body.contains(m)) {
        return Err("annotation contains special tokens".into());
    }
    Ok(body.to_string())
}

struct Run<'a, G: ?Sized, A: ?Sized> {
    sample: &'a GroundingSample,
    grounder: &'a G,
    annotator: &'a A,
    cfg: &'a SynthesisConfig,
    trace: StageTrace,
}

impl<G: Backend + ?Sized, A: Backend + ?Sized> Run<'_, G, A> {
    fn call<B: Backend + ?Sized>(
        &self,
        backend: &B,
        prompt: &str,
        task: GenerationTask,
        mode: ModeHint,
    ) -> Result<(String, f64), BackendError> {
        let req = GenerationRequest::new(self.sample.screenshot.clone(), prompt, task, mode)
            .with_max_new_tokens(self.cfg.max_new_tokens)?
            .with_seed(self.cfg.seed);
        let res = self.cfg.retry.run(|| backend.generate(&req))?;
        Ok((res.text, res.latency_ms))
    }

    fn fail(self, source: BackendError) -> SynthesisError {
        SynthesisError::Backend {
            sample_id: self.sample.id.clone(),
            source,
            trace: self.trace,
        }
    }

    fn annotate(
        &self,
        stage: PromptStage,
        ctx: &PromptContext,
    ) -> Result<Result<(String, f64), (String, String, f64)>, SynthesisError> {
        let (task, kind) = match stage {
            PromptStage::Focus => (GenerationTask::Focus, SegmentKind::Focus),
            _ => (GenerationTask::Summarize, SegmentKind::Summary),
        };
        let prompt = build_prompt(stage, &self.sample.instruction, ctx, &self.cfg.templates)?;
        let (text, ms) = self
            .call(self.annotator, &prompt, task, ModeHint::Free)
            .map_err(|e| SynthesisError::Backend {
                sample_id: self.sample.id.clone(),
                source: e,
                trace: self.trace.clone(),
            })?;
        Ok(match clean_annotation(&text, kind) {
            Ok(body) => Ok((body, ms)),
            Err(why) => Err((text, why, ms)),
        })
    }

    /// Grounds under `ctx` and records the attempt. Returns the parsed chain on a hit.
    fn ground(
        &mut self,
        stage: Stage,
        ctx: &PromptContext,
        annotation: Option<String>,
        annotation_ms: f64,
    ) -> Result<Option<NormPoint>, BackendError> {
        let prompt = build_prompt(PromptStage::Ground, &self.sample.instruction, ctx, &self.cfg.templates)
            .expect("grounding context is complete");
        let (text, ms) = self.call(self.grounder, &prompt, GenerationTask::Ground, ModeHint::ForceFast)?;
        let parsed = parse_chain(&text);
        let point = parsed.as_ref().ok().map(Chain::point);
        let is_hit = point.is_some_and(|p| hit(p, &self.sample.bbox));
        self.trace.push(StageAttempt {
            stage,
            prompt,
            annotation,
            raw_text: text,
            point: point.map(|p| [p.x(), p.y()]),
            parse_error: parsed.err().map(|e| e.to_string()),
            hit: is_hit,
            latency_ms: annotation_ms + ms,
        });
        Ok(point.filter(|_| is_hit))
    }

    fn record_bad_annotation(&mut self, stage: Stage, ctx: &PromptContext, raw: String, why: String, ms: f64) {
        let prompt = build_prompt(PromptStage::Ground, &self.sample.instruction, ctx, &self.cfg.templates)
            .unwrap_or_default();
        self.trace.push(StageAttempt {
            stage,
            prompt,
            annotation: Some(raw),
            raw_text: String::new(),
            point: None,
            parse_error: Some(why),
            hit: false,
            latency_ms: ms,
        });
    }

    fn finish(self, class: OutcomeClass, chain: Option<Chain>) -> SynthesisOutcome {
        SynthesisOutcome {
            sample_id: self.sample.id.clone(),
            class,
            chain,
            trace: self.trace,
        }
    }
}

/// Runs the three stages for one sample.
pub fn synthesize_sample<G: Backend + ?Sized, A: Backend + ?Sized>(
    sample: &GroundingSample,
    grounder: &G,
    annotator: &A,
    cfg: &SynthesisConfig,
) -> Result<SynthesisOutcome, SynthesisError> {
    let mut run = Run {
        sample,
        grounder,
        annotator,
        cfg,
        trace: StageTrace::default(),
    };

    let none = PromptContext::none();
    match run.ground(Stage::FastAttempt, &none, None, 0.0) {
        Ok(Some(point)) => return Ok(run.finish(OutcomeClass::FastData, Some(FastChain { point }.into()))),
        Ok(None) => {}
        Err(e) => return Err(run.fail(e)),
    }

    let (summary, ms) = match run.annotate(PromptStage::Summarize, &none)? {
        Ok(v) => v,
        Err((raw, why, ms)) => {
            run.record_bad_annotation(Stage::SummaryAttempt, &none, raw, why, ms);
            return Ok(run.finish(OutcomeClass::Unresolved, None));
        }
    };
    let ctx = PromptContext::summary(summary.clone());
    match run.ground(Stage::SummaryAttempt, &ctx, Some(summary.clone()), ms) {
        Ok(Some(point)) => {
            let chain = SlowChain::new(summary, None, point).expect("clean annotation");
            return Ok(run.finish(OutcomeClass::SlowData, Some(chain.into())));
        }
        Ok(None) => {}
        Err(e) => return Err(run.fail(e)),
    }

    let (focus, ms) = match run.annotate(PromptStage::Focus, &ctx)? {
        Ok(v) => v,
        Err((raw, why, ms)) => {
            run.record_bad_annotation(Stage::FocusAttempt, &ctx, raw, why, ms);
            return Ok(run.finish(OutcomeClass::Unresolved, None));
        }
    };
    let full = PromptContext::full(summary.clone(), focus.clone());
    match run.ground(Stage::FocusAttempt, &full, Some(focus.clone()), ms) {
        Ok(Some(point)) => {
            let chain = SlowChain::new(summary, Some(focus), point).expect("clean annotation");
            Ok(run.finish(OutcomeClass::SlowData, Some(chain.into())))
        }
        Ok(None) => Ok(run.finish(OutcomeClass::Unresolved, None)),
        Err(e) => Err(run.fail(e)),
    }
}

/// Turns a resolved outcome into a fine-tuning pair supervised on the box center.
pub fn build_training_record(
    outcome: &SynthesisOutcome,
    sample: &GroundingSample,
    precision: Precision,
    templates: &PromptTemplateSet,
) -> Result<TrainingRecord, SynthesisError> {
    let (chain, stage) = match (&outcome.chain, outcome.resolved_stage()) {
        (Some(c), Some(s)) if outcome.class != OutcomeClass::Unresolved => (c, s),
        _ => return Err(SynthesisError::Unresolved(outcome.sample_id.clone())),
    };
    let verified = chain.point();
    let (target, places) = snap_center(&sample.bbox, precision).unwrap_or((verified, Precision::new_unchecked(Precision::MAX)));
    let target_chain = match chain {
        Chain::Fast(_) => Chain::Fast(FastChain { point: target }),
        Chain::Slow(s) => Chain::Slow(
            SlowChain::new(s.summary(), s.focus().map(str::to_string), target).expect("already valid"),
        ),
    };
    let prompt = build_prompt(PromptStage::Ground, &sample.instruction, &PromptContext::none(), templates)?;
    Ok(TrainingRecord {
        id: sample.id.clone(),
        screenshot: sample.screenshot.uri().to_string(),
        prompt,
        completion: render_chain(&target_chain, places),
        class: if chain.is_slow() { DataClass::Slow } else { DataClass::Fast },
        metadata: TrainingMetadata {
            source: sample.source.clone(),
            platform: sample.platform,
            element_kind: sample.element_kind,
            verified_point: [verified.x(), verified.y()],
            stage: stage.number(),
        },
    })
}

/// A sample that did not become training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnresolvedRecord {
    pub id: String,
    pub source: String,
    pub platform: Platform,
    pub element_kind: ElementKind,
    pub instruction: String,
    /// Backend failure that aborted the sample, if that is why it is here.
    pub error: Option<String>,
    pub trace: Vec<AttemptSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub stage: Stage,
    pub point: Option<[f64; 2]>,
    pub parse_error: Option<String>,
    pub hit: bool,
}

impl From<&StageAttempt> for AttemptSummary {
    fn from(a: &StageAttempt) -> Self {
        Self {
            stage: a.stage,
            point: a.point,
            parse_error: a.parse_error.clone(),
            hit: a.hit,
        }
    }
}

impl UnresolvedRecord {
    fn new(s: &GroundingSample, trace: &StageTrace, error: Option<String>) -> Self {
        Self {
            id: s.id.clone(),
            source: s.source.clone(),
            platform: s.platform,
            element_kind: s.element_kind,
            instruction: s.instruction.clone(),
            error,
            trace: trace.attempts().iter().map(AttemptSummary::from).collect(),
        }
    }
}

pub trait Sink<T> {
    fn accept(&mut self, record: &T) -> Result<(), DatasetError>;
}

impl<T: Serialize> Sink<T> for JsonlWriter {
    fn accept(&mut self, record: &T) -> Result<(), DatasetError> {
        self.write(record)
    }
}

impl<T: Clone> Sink<T> for Vec<T> {
    fn accept(&mut self, record: &T) -> Result<(), DatasetError> {
        self.push(record.clone());
        Ok(())
    }
}

pub struct Sinks<'a> {
    pub fast: &'a mut dyn Sink<TrainingRecord>,
    pub slow: &'a mut dyn Sink<TrainingRecord>,
    pub unresolved: &'a mut dyn Sink<UnresolvedRecord>,
}

/// Attempts and hits per stage across a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attrition {
    pub fast_attempts: u64,
    pub fast_hits: u64,
    pub summary_attempts: u64,
    pub summary_hits: u64,
    pub focus_attempts: u64,
    pub focus_hits: u64,
    pub parse_failures: u64,
    pub unresolved: u64,
    pub backend_errors: u64,
}

impl Attrition {
    fn add_trace(&mut self, t: &StageTrace) {
        for a in t.attempts() {
            let (n, h) = match a.stage {
                Stage::FastAttempt => (&mut self.fast_attempts, &mut self.fast_hits),
                Stage::SummaryAttempt => (&mut self.summary_attempts, &mut self.summary_hits),
                Stage::FocusAttempt => (&mut self.focus_attempts, &mut self.focus_hits),
            };
            *n += 1;
            *h += u64::from(a.hit);
            self.parse_failures += u64::from(a.parse_error.is_some());
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub samples: u64,
    /// Exported training data by source.
    pub table: DatasetStats,
    /// Unresolved or failed samples by source.
    pub unresolved_by_source: BTreeMap<String, u64>,
    pub attrition: Attrition,
}

impl fmt::Display for SynthesisStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = &self.attrition;
        writeln!(
            f,
            "samples {}  fast {}  slow {}  unresolved {}  backend errors {}",
            self.samples, self.table.total.fast_count, self.table.total.slow_count, a.unresolved, a.backend_errors
        )?;
        write!(
            f,
            "stage hits: fast {}/{}  summary {}/{}  focus {}/{}",
            a.fast_hits, a.fast_attempts, a.summary_hits, a.summary_attempts, a.focus_hits, a.focus_attempts
        )
    }
}

#[derive(Serialize)]
struct Progress {
    done: u64,
    total: u64,
    fast: u64,
    slow: u64,
    unresolved: u64,
    backend_errors: u64,
}

/// Synthesizes every sample, routing records to the three sinks in id order.
pub fn synthesize_corpus<G: Backend + ?Sized, A: Backend + ?Sized>(
    samples: &[GroundingSample],
    grounder: &G,
    annotator: &A,
    cfg: &SynthesisConfig,
    sinks: Sinks<'_>,
) -> Result<SynthesisStats, SynthesisError> {
    let workers = cfg
        .parallelism
        .min(grounder.max_in_flight())
        .min(annotator.max_in_flight())
        .max(1);
    let mut progress = Progress {
        done: 0,
        total: samples.len() as u64,
        fast: 0,
        slow: 0,
        unresolved: 0,
        backend_errors: 0,
    };
    let results = parallel_map(
        samples,
        workers,
        |s| synthesize_sample(s, grounder, annotator, cfg),
        |r| {
            if !cfg.progress {
                return;
            }
            progress.done += 1;
            match r {
                Ok(o) if o.class == OutcomeClass::FastData => progress.fast += 1,
                Ok(o) if o.class == OutcomeClass::SlowData => progress.slow += 1,
                Ok(_) => progress.unresolved += 1,
                Err(_) => progress.backend_errors += 1,
            }
            if let Ok(line) = serde_json::to_string(&progress) {
                let _ = writeln!(std::io::stderr().lock(), "{line}");
            }
        },
    );

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));

    let mut stats = SynthesisStats {
        samples: samples.len() as u64,
        ..Default::default()
    };
    let mut exported = Vec::new();
    for i in order {
        let s = &samples[i];
        match &results[i] {
            Ok(o) => {
                stats.attrition.add_trace(&o.trace);
                match o.class {
                    OutcomeClass::Unresolved => {
                        stats.attrition.unresolved += 1;
                        *stats.unresolved_by_source.entry(s.source.clone()).or_default() += 1;
                        sinks.unresolved.accept(&UnresolvedRecord::new(s, &o.trace, None))?;
                    }
                    class => {
                        let rec = build_training_record(o, s, cfg.precision, &cfg.templates)?;
                        let sink: &mut dyn Sink<TrainingRecord> =
                            if class == OutcomeClass::FastData { &mut *sinks.fast } else { &mut *sinks.slow };
                        sink.accept(&rec)?;
                        exported.push(rec);
                    }
                }
            }
            Err(SynthesisError::Backend { source, trace, .. }) => {
                log::warn!("sample {}: {source}", s.id);
                stats.attrition.add_trace(trace);
                stats.attrition.backend_errors += 1;
                *stats.unresolved_by_source.entry(s.source.clone()).or_default() += 1;
                sinks
                    .unresolved
                    .accept(&UnresolvedRecord::new(s, trace, Some(source.to_string())))?;
            }
            Err(SynthesisError::Prompt(e)) => return Err(SynthesisError::Prompt(e.clone())),
            Err(e) => return Err(SynthesisError::Unresolved(format!("{}: {e}", s.id))),
        }
    }
    stats.table = compute_stats(&exported);
    Ok(stats)
}
