//! Benchmark harness: route each sample through the switching policy, score
//! the predicted point against its box, and aggregate by platform and kind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    build_prompt, Backend, BackendError, GenerationRequest, GenerationTask, ModeHint,
    PromptContext, PromptStage, PromptTemplateSet, RetryPolicy, MIN_NEW_TOKENS,
};
use crate::chain::parse_chain;
use crate::geometry::hit;
use crate::par::parallel_map;
use crate::sample::{ElementKind, GroundingSample, Platform};
use crate::switching::{select_mode, Mode, SwitchError, SwitchPolicy, TieBreak, DEFAULT_ALPHA};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    EmptyDataset,
    #[error(transparent)]
    Policy(#[from] SwitchError),
    #[error(transparent)]
    Prompt(#[from] crate::backend::PromptError),
    #[error("no alphas given")]
    NoAlphas,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub alpha: f64,
    pub tie_break: TieBreak,
    pub templates: PromptTemplateSet,
    /// Wall-clock budget for one sample, probe included.
    pub timeout: Duration,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub seed: Option<u64>,
    /// Report the size-weighted mean instead of the per-cell mean as `overall`.
    pub weighted: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tie_break: TieBreak::Fast,
            templates: PromptTemplateSet::default(),
            timeout: Duration::from_secs(120),
            parallelism: 4,
            retry: RetryPolicy::default(),
            seed: None,
            weighted: false,
        }
    }
}

impl EvalConfig {
    pub fn policy(&self) -> Result<SwitchPolicy, SwitchError> {
        SwitchPolicy::with_tie_break(self.alpha, self.tie_break)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    Parse,
    Backend,
}

/// Per-sample result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub id: String,
    pub mode: Option<Mode>,
    pub text: Option<String>,
    pub hit: bool,
    pub latency_ms: f64,
    pub failure: Option<Failure>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub n: u64,
    pub hits: u64,
    pub accuracy: f64,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.n += 1;
        self.hits += u64::from(hit);
        self.accuracy = self.hits as f64 / self.n as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub platform: Platform,
    pub element_kind: ElementKind,
    #[serde(flatten)]
    pub tally: Tally,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub fast: u64,
    pub slow: u64,
}

impl ModeCounts {
    fn add(&mut self, m: Mode) {
        match m {
            Mode::Fast => self.fast += 1,
            Mode::Slow => self.slow += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.fast + self.slow
    }

    /// Fraction routed fast; zero when nothing was routed.
    pub fn fast_fraction(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.fast as f64 / t as f64,
        }
    }

    pub fn slow_fraction(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.slow as f64 / t as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureTally {
    pub parse_errors: u64,
    pub backend_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub samples: u64,
    /// Nonempty platform × kind cells in table order.
    pub cells: Vec<Cell>,
    /// Mean of cell accuracies, or the pooled accuracy when `weighted`.
    pub overall: f64,
    pub weighted: bool,
    pub pooled_accuracy: f64,
    pub mode_counts: ModeCounts,
    pub mode_counts_by_kind: BTreeMap<ElementKind, ModeCounts>,
    pub mean_latency_ms: f64,
    pub failures: FailureTally,
    /// Accuracy by free-form category, when samples carry one.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categories: BTreeMap<String, Tally>,
}

impl EvalReport {
    pub fn cell(&self, platform: Platform, kind: ElementKind) -> Option<&Tally> {
        self.cells
            .iter()
            .find(|c| c.platform == platform && c.element_kind == kind)
            .map(|c| &c.tally)
    }

    /// Aligned text table: one column per platform × kind, then the average.
    pub fn render_table(&self) -> String {
        let mut headers: Vec<String> = Vec::new();
        let mut values: Vec<String> = Vec::new();
        for p in Platform::ALL {
            for k in ElementKind::ALL {
                headers.push(format!("{} {}", title(p.as_str()), kind_label(k)));
                values.push(
                    self.cell(p, k)
                        .map_or_else(|| "-".into(), |t| format!("{:.1}", 100.0 * t.accuracy)),
                );
            }
        }
        headers.push("Average".into());
        values.push(format!("{:.1}", 100.0 * self.overall));
        let widths: Vec<usize> = headers
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let row = |cols: &[String]| {
            cols.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", row(&headers));
        let _ = writeln!(
            out,
            "{}",
            widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
        );
        let _ = writeln!(out, "{}", row(&values));
        let _ = writeln!(
            out,
            "alpha {:.2}  n {}  fast {}  slow {}  latency {:.1} ms  parse errors {}  backend errors {}",
            self.alpha,
            self.samples,
            self.mode_counts.fast,
            self.mode_counts.slow,
            self.mean_latency_ms,
            self.failures.parse_errors,
            self.failures.backend_errors
        );
        if !self.categories.is_empty() {
            let w = self.categories.keys().map(String::len).max().unwrap_or(0).max(8);
            for (c, t) in &self.categories {
                let _ = writeln!(out, "{c:<w$}  {:>5.1}  (n={})", 100.0 * t.accuracy, t.n);
            }
        }
        out
    }
}

fn title(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn kind_label(k: ElementKind) -> &'static str {
    match k {
        ElementKind::Text => "Text",
        ElementKind::IconWidget => "Icon/Widget",
    }
}

fn eval_sample<B: Backend + ?Sized>(
    backend: &B,
    s: &GroundingSample,
    policy: &SwitchPolicy,
    prompt: &str,
    cfg: &EvalConfig,
) -> SampleVerdict {
    let started = Instant::now();
    let mut v = SampleVerdict {
        id: s.id.clone(),
        mode: None,
        text: None,
        hit: false,
        latency_ms: 0.0,
        failure: None,
        error: None,
    };
    let request = |hint: ModeHint, tokens: Option<u32>| {
        let req = GenerationRequest::new(s.screenshot.clone(), prompt, GenerationTask::Ground, hint)
            .with_seed(cfg.seed);
        let req = match tokens {
            Some(n) => req.with_max_new_tokens(n)?,
            None => req,
        };
        let res = cfg.retry.run(|| backend.generate(&req))?;
        if started.elapsed() > cfg.timeout {
            return Err(BackendError::Timeout);
        }
        Ok(res)
    };
    let fail = |mut v: SampleVerdict, e: BackendError| {
        v.failure = Some(Failure::Backend);
        v.error = Some(e.to_string());
        v
    };

    let probe = match request(ModeHint::Free, Some(MIN_NEW_TOKENS)) {
        Ok(r) => r,
        Err(e) => return fail(v, e),
    };
    let decision = select_mode(&probe.first_token_dist, policy);
    v.mode = Some(decision.mode);
    let hint = match decision.mode {
        Mode::Fast => ModeHint::ForceFast,
        Mode::Slow => ModeHint::ForceSlow,
    };
    let out = match request(hint, None) {
        Ok(r) => r,
        Err(e) => return fail(v, e),
    };
    v.latency_ms = probe.latency_ms + out.latency_ms;
    match parse_chain(&out.text) {
        Ok(chain) => v.hit = hit(chain.point(), &s.bbox),
        Err(e) => {
            v.failure = Some(Failure::Parse);
            v.error = Some(e.to_string());
        }
    }
    v.text = Some(out.text);
    v
}

/// Per-sample verdicts in id order, plus the aggregate report.
pub fn evaluate_detailed<B: Backend + ?Sized>(
    backend: &B,
    samples: &[GroundingSample],
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<SampleVerdict>), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let policy = cfg.policy()?;
    let prompts = samples
        .iter()
        .map(|s| build_prompt(PromptStage::Ground, &s.instruction, &PromptContext::none(), &cfg.templates))
        .collect::<Result<Vec<_>, _>>()?;
    let indexed: Vec<usize> = (0..samples.len()).collect();
    let workers = cfg.parallelism.min(backend.max_in_flight()).max(1);
    let mut verdicts = parallel_map(
        &indexed,
        workers,
        |&i| eval_sample(backend, &samples[i], &policy, &prompts[i], cfg),
        |_| {},
    );

    let mut order: Vec<usize> = indexed;
    order.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));

    let mut cells: BTreeMap<(Platform, ElementKind), Tally> = BTreeMap::new();
    let mut categories: BTreeMap<String, Tally> = BTreeMap::new();
    let mut modes = ModeCounts::default();
    let mut by_kind: BTreeMap<ElementKind, ModeCounts> = BTreeMap::new();
    let mut failures = FailureTally::default();
    let mut pooled = Tally::default();
    let mut latency = 0.0;
    for &i in &order {
        let (s, v) = (&samples[i], &verdicts[i]);
        cells.entry((s.platform, s.element_kind)).or_default().add(v.hit);
        pooled.add(v.hit);
        if let Some(c) = &s.category {
            categories.entry(c.clone()).or_default().add(v.hit);
        }
        if let Some(m) = v.mode {
            modes.add(m);
            by_kind.entry(s.element_kind).or_default().add(m);
        }
        match v.failure {
            Some(Failure::Parse) => failures.parse_errors += 1,
            Some(Failure::Backend) => failures.backend_errors += 1,
            None => {}
        }
        latency += v.latency_ms;
    }
    let cells: Vec<Cell> = cells
        .into_iter()
        .map(|((platform, element_kind), tally)| Cell {
            platform,
            element_kind,
            tally,
        })
        .collect();
    let cell_mean = cells.iter().map(|c| c.tally.accuracy).sum::<f64>() / cells.len() as f64;
    let report = EvalReport {
        alpha: cfg.alpha,
        samples: samples.len() as u64,
        overall: if cfg.weighted { pooled.accuracy } else { cell_mean },
        weighted: cfg.weighted,
        pooled_accuracy: pooled.accuracy,
        cells,
        mode_counts: modes,
        mode_counts_by_kind: by_kind,
        mean_latency_ms: latency / samples.len() as f64,
        failures,
        categories,
    };
    let mut sorted = Vec::with_capacity(order.len());
    for i in order {
        sorted.push(std::mem::replace(
            &mut verdicts[i],
            SampleVerdict {
                id: String::new(),
                mode: None,
                text: None,
                hit: false,
                latency_ms: 0.0,
                failure: None,
                error: None,
            },
        ));
    }
    Ok((report, sorted))
}

pub fn evaluate<B: Backend + ?Sized>(
    backend: &B,
    samples: &[GroundingSample],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    evaluate_detailed(backend, samples, cfg).map(|(r, _)| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub accuracy: f64,
    pub latency_ms: f64,
    pub slow_fraction: f64,
}

pub fn sweep_alpha<B: Backend + ?Sized>(
    backend: &B,
    samples: &[GroundingSample],
    alphas: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<SweepRow>, EvalError> {
    if alphas.is_empty() {
        return Err(EvalError::NoAlphas);
    }
    for &a in alphas {
        SwitchPolicy::new(a)?;
    }
    alphas
        .iter()
        .map(|&alpha| {
            let r = evaluate(backend, samples, &EvalConfig { alpha, ..cfg.clone() })?;
            Ok(SweepRow {
                alpha,
                accuracy: r.overall,
                latency_ms: r.mean_latency_ms,
                slow_fraction: r.mode_counts.slow_fraction(),
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "alpha,accuracy,latency_ms";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.3}", r.alpha, r.accuracy, r.latency_ms);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindActivation {
    pub element_kind: ElementKind,
    pub fast_fraction: f64,
    pub slow_fraction: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub by_kind: Vec<KindActivation>,
    pub overall_fast: f64,
    pub overall_slow: f64,
}

impl ActivationReport {
    pub fn kind(&self, k: ElementKind) -> Option<&KindActivation> {
        self.by_kind.iter().find(|a| a.element_kind == k)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for a in &self.by_kind {
            let _ = writeln!(
                out,
                "{:<12} fast {:>6}  slow {:>6}  (n={})",
                kind_label(a.element_kind),
                format_percent(a.fast_fraction),
                format_percent(a.slow_fraction),
                a.n
            );
        }
        let _ = writeln!(
            out,
            "{:<12} fast {:>6}  slow {:>6}",
            "Overall",
            format_percent(self.overall_fast),
            format_percent(self.overall_slow)
        );
        out
    }
}

pub fn activation_report(report: &EvalReport) -> ActivationReport {
    ActivationReport {
        by_kind: report
            .mode_counts_by_kind
            .iter()
            .map(|(k, m)| KindActivation {
                element_kind: *k,
                fast_fraction: m.fast_fraction(),
                slow_fraction: m.slow_fraction(),
                n: m.total(),
            })
            .collect(),
        overall_fast: report.mode_counts.fast_fraction(),
        overall_slow: report.mode_counts.slow_fraction(),
    }
}

/// One-decimal percentage, e.g. `0.769` becomes `76.9%`.
pub fn format_percent(f: f64) -> String {
    format!("{:.1}%", 100.0 * f)
}
