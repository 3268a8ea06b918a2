//! Python bindings. Boxes and points cross the boundary as plain tuples;
//! reports come back as dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dualground::backend::{ErrorModel, MockBackend, RetryPolicy};
use dualground::chain::{self, FirstToken, Precision};
use dualground::eval::{self, EvalConfig};
use dualground::geometry::{self, NormBBox, NormPoint, ScreenshotRef};
use dualground::scenes::{self, SceneGenParams, SyntheticScene};
use dualground::switching::{self, FirstTokenDist, Mode, SwitchPolicy, TieBreak};
use dualground::synthesis::{self, Sinks, SynthesisConfig};
use dualground::GroundingSample;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bbox(b: (f64, f64, f64, f64)) -> PyResult<NormBBox> {
    NormBBox::new(b.0, b.1, b.2, b.3).map_err(value_err)
}

fn point(p: (f64, f64)) -> PyResult<NormPoint> {
    NormPoint::new(p.0, p.1).map_err(value_err)
}

fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// True when the point lies inside the box, edges included.
#[pyfunction]
fn hit(p: (f64, f64), b: (f64, f64, f64, f64)) -> PyResult<bool> {
    Ok(geometry::hit(point(p)?, &bbox(b)?))
}

#[pyfunction]
fn center(b: (f64, f64, f64, f64)) -> PyResult<(f64, f64)> {
    let c = geometry::center(&bbox(b)?);
    Ok((c.x(), c.y()))
}

/// Pixel box to normalized box for a screenshot of the given size.
#[pyfunction]
fn normalize_bbox(pixel_box: [i64; 4], width_px: u32, height_px: u32) -> PyResult<(f64, f64, f64, f64)> {
    let shot = ScreenshotRef::new("-", width_px, height_px).map_err(value_err)?;
    let b = geometry::normalize_bbox(pixel_box, &shot).map_err(value_err)?;
    Ok((b.x_min(), b.y_min(), b.x_max(), b.y_max()))
}

/// A parsed reasoning chain.
#[pyclass(frozen, get_all, skip_from_py_object, module = "dualground_py")]
#[derive(Clone)]
struct Chain {
    kind: &'static str,
    summary: Option<String>,
    focus: Option<String>,
    point: (f64, f64),
}

#[pymethods]
impl Chain {
    fn __repr__(&self) -> String {
        format!(
            "Chain(kind={:?}, summary={:?}, focus={:?}, point={:?})",
            self.kind, self.summary, self.focus, self.point
        )
    }

    fn render(&self, precision: u8) -> PyResult<String> {
        render_chain(self.point, self.summary.clone(), self.focus.clone(), precision)
    }
}

impl From<&chain::Chain> for Chain {
    fn from(c: &chain::Chain) -> Self {
        let p = c.point();
        let (summary, focus) = match c {
            chain::Chain::Fast(_) => (None, None),
            chain::Chain::Slow(s) => (Some(s.summary().to_string()), s.focus().map(str::to_string)),
        };
        Self {
            kind: if c.is_slow() { "slow" } else { "fast" },
            summary,
            focus,
            point: (p.x(), p.y()),
        }
    }
}

#[pyfunction]
fn parse_chain(text: &str) -> PyResult<Chain> {
    chain::parse_chain(text).map(|c| Chain::from(&c)).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (point, summary=None, focus=None, precision=2))]
fn render_chain(point: (f64, f64), summary: Option<String>, focus: Option<String>, precision: u8) -> PyResult<String> {
    let p = self::point(point)?;
    let precision = Precision::new(precision).map_err(value_err)?;
    let c = match (summary, focus) {
        (None, None) => chain::Chain::Fast(chain::FastChain { point: p }),
        (Some(s), f) => chain::Chain::Slow(chain::SlowChain::new(s, f, p).map_err(value_err)?),
        (None, Some(_)) => return Err(PyValueError::new_err("focus requires a summary")),
    };
    Ok(chain::render_chain(&c, precision))
}

/// "slow", "fast" or "other", by the opening marker.
#[pyfunction]
fn classify_first_token(text: &str) -> &'static str {
    match chain::classify_first_token(text) {
        FirstToken::SlowLead => "slow",
        FirstToken::FastLead => "fast",
        FirstToken::Other => "other",
    }
}

#[pyfunction]
#[pyo3(signature = (p_summary, p_ground, alpha=switching::DEFAULT_ALPHA, tie_break="fast"))]
fn select_mode<'py>(
    py: Python<'py>,
    p_summary: f64,
    p_ground: f64,
    alpha: f64,
    tie_break: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let tb = match tie_break {
        "fast" => TieBreak::Fast,
        "slow" => TieBreak::Slow,
        other => return Err(PyValueError::new_err(format!("tie_break {other:?}"))),
    };
    let d = FirstTokenDist::from_markers(p_summary, p_ground).map_err(value_err)?;
    let pol = SwitchPolicy::with_tie_break(alpha, tb).map_err(value_err)?;
    let m = switching::select_mode(&d, &pol);
    let out = PyDict::new(py);
    out.set_item("mode", if m.mode == Mode::Slow { "slow" } else { "fast" })?;
    out.set_item("p_fast_adj", m.p_fast_adj)?;
    out.set_item("p_slow_adj", m.p_slow_adj)?;
    out.set_item("fallback_used", m.fallback_used)?;
    Ok(out)
}

/// A seeded synthetic scene corpus with its paired samples.
#[pyclass(module = "dualground_py")]
struct SceneCorpus {
    scenes: Vec<SyntheticScene>,
    samples: Vec<GroundingSample>,
}

impl SceneCorpus {
    fn mock(&self, seed: u64, overthinking: bool) -> MockBackend {
        let model = if overthinking {
            ErrorModel::default()
        } else {
            ErrorModel::default().without_overthinking()
        };
        MockBackend::new(self.scenes.clone(), model, seed)
    }

    fn eval_config(&self, alpha: f64, seed: u64) -> EvalConfig {
        EvalConfig {
            alpha,
            seed: Some(seed),
            retry: RetryPolicy::none(),
            ..EvalConfig::default()
        }
    }
}

#[pymethods]
impl SceneCorpus {
    #[new]
    #[pyo3(signature = (n_scenes=1000, seed=0, icon_fraction=0.4))]
    fn new(n_scenes: usize, seed: u64, icon_fraction: f64) -> PyResult<Self> {
        let params = SceneGenParams {
            n_scenes,
            seed,
            icon_fraction,
            ..SceneGenParams::default()
        };
        let (scenes, samples) = scenes::generate_scenes(&params).map_err(value_err)?;
        Ok(Self { scenes, samples })
    }

    fn __len__(&self) -> usize {
        self.scenes.len()
    }

    fn complexities(&self) -> Vec<f64> {
        self.scenes.iter().map(scenes::complexity).collect()
    }

    fn element_kinds(&self) -> Vec<&'static str> {
        self.samples.iter().map(|s| s.element_kind.as_str()).collect()
    }

    fn scene_json(&self, index: usize) -> PyResult<String> {
        let s = self
            .scenes
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        serde_json::to_string(s).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Evaluates the mock backend over this corpus.
    #[pyo3(signature = (alpha=switching::DEFAULT_ALPHA, seed=0, overthinking=true))]
    fn evaluate_mock<'py>(&self, py: Python<'py>, alpha: f64, seed: u64, overthinking: bool) -> PyResult<Bound<'py, PyAny>> {
        let backend = self.mock(seed, overthinking);
        let r = eval::evaluate(&backend, &self.samples, &self.eval_config(alpha, seed)).map_err(value_err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (alphas, seed=0, overthinking=true))]
    fn sweep_mock<'py>(&self, py: Python<'py>, alphas: Vec<f64>, seed: u64, overthinking: bool) -> PyResult<Bound<'py, PyAny>> {
        let backend = self.mock(seed, overthinking);
        let rows = eval::sweep_alpha(&backend, &self.samples, &alphas, &self.eval_config(0.6, seed)).map_err(value_err)?;
        to_py(py, &rows)
    }

    /// Runs synthesis with the mock as grounder and annotator; returns stats.
    #[pyo3(signature = (seed=0))]
    fn synthesize_mock<'py>(&self, py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let backend = self.mock(seed, true);
        let cfg = SynthesisConfig {
            seed: Some(seed),
            retry: RetryPolicy::none(),
            ..SynthesisConfig::default()
        };
        let (mut fast, mut slow, mut unresolved) = (Vec::new(), Vec::new(), Vec::new());
        let stats = synthesis::synthesize_corpus(
            &self.samples,
            &backend,
            &backend,
            &cfg,
            Sinks {
                fast: &mut fast,
                slow: &mut slow,
                unresolved: &mut unresolved,
            },
        )
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &stats)
    }
}

#[pymodule]
fn dualground_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hit, m)?)?;
    m.add_function(wrap_pyfunction!(center, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_bbox, m)?)?;
    m.add_function(wrap_pyfunction!(parse_chain, m)?)?;
    m.add_function(wrap_pyfunction!(render_chain, m)?)?;
    m.add_function(wrap_pyfunction!(classify_first_token, m)?)?;
    m.add_function(wrap_pyfunction!(select_mode, m)?)?;
    m.add_class::<Chain>()?;
    m.add_class::<SceneCorpus>()?;
    m.add("DEFAULT_ALPHA", switching::DEFAULT_ALPHA)?;
    Ok(())
}
