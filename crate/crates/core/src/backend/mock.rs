//! Deterministic mock grounding model over synthetic scenes.
//!
//! Perception is replaced by a parametric success model. Every scene draws
//! one uniform number `u` from `(seed, scene id)`; a grounding attempt hits
//! iff `u < p`, where `p` depends on the scene, on the reasoning context in
//! the prompt and on the requested mode. Sharing `u` across attempts keeps
//! outcomes nested: raising `p` never turns a hit into a miss.
//!
//! Latency is simulated, never slept: `prefill_ms + per_token_ms * tokens`,
//! with tokens counted by [`mock_tokens`].

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest, GenerationResult, GenerationTask, ModeHint};
use crate::chain::{
    quantize, render_chain, snap_center, Chain, FastChain, Precision, SlowChain, MARKERS,
};
use crate::geometry::{center, hit, NormPoint};
use crate::sample::ElementKind;
use crate::scenes::{complexity, SyntheticScene};
use crate::switching::FirstTokenDist;

pub const DEFAULT_MOCK_PRECISION: Precision = Precision::new_unchecked(4);

/// Probability of a hit as a function of the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessCurve {
    Constant { p: f64 },
    /// Hit iff the scene has fewer than `limit` distractors.
    DistractorsBelow { limit: u32 },
    /// `clamp(base - slope * complexity, floor, 1)`.
    Linear { base: f64, slope: f64, floor: f64 },
}

impl SuccessCurve {
    pub fn probability(&self, scene: &SyntheticScene) -> f64 {
        match *self {
            SuccessCurve::Constant { p } => p,
            SuccessCurve::DistractorsBelow { limit } => {
                if scene.distractor_count() < limit {
                    1.0
                } else {
                    0.0
                }
            }
            SuccessCurve::Linear { base, slope, floor } => {
                (base - slope * complexity(scene)).clamp(floor, 1.0)
            }
        }
        .clamp(0.0, 1.0)
    }
}

/// Logistic split of first-token mass between the two mode markers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstTokenModel {
    /// Complexity at which both markers are equally likely.
    pub midpoint: f64,
    pub steepness: f64,
    /// Mass left for tokens other than the two markers.
    pub other_mass: f64,
}

impl FirstTokenModel {
    pub fn dist(&self, complexity: f64) -> FirstTokenDist {
        let marker_mass = 1.0 - self.other_mass;
        let share = 1.0 / (1.0 + (-self.steepness * (complexity - self.midpoint)).exp());
        let p_summary = marker_mass * share;
        let p_ground = (marker_mass - p_summary).max(0.0);
        FirstTokenDist::new(p_summary, p_ground, self.other_mass)
            .expect("logistic split stays a valid distribution")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub prefill_ms: f64,
    pub per_token_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorModel {
    /// Direct grounding with no reasoning context.
    pub fast: SuccessCurve,
    /// Grounding with an interface summary in context.
    pub with_summary: SuccessCurve,
    /// Grounding with summary and focused analysis, or a self-generated slow chain.
    pub with_focus: SuccessCurve,
    /// Subtracted from any reasoning-assisted attempt on a simple scene.
    pub overthinking_penalty: f64,
    /// Scenes with complexity at or below this are simple.
    pub simple_max_complexity: f64,
    pub first_token: FirstTokenModel,
    pub latency: LatencyModel,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self {
            fast: SuccessCurve::Linear {
                base: 0.97,
                slope: 0.07,
                floor: 0.05,
            },
            with_summary: SuccessCurve::Linear {
                base: 0.97,
                slope: 0.045,
                floor: 0.1,
            },
            with_focus: SuccessCurve::Linear {
                base: 0.97,
                slope: 0.03,
                floor: 0.15,
            },
            overthinking_penalty: 0.3,
            simple_max_complexity: 4.0,
            first_token: FirstTokenModel {
                midpoint: 7.0,
                steepness: 0.8,
                other_mass: 0.02,
            },
            latency: LatencyModel {
                prefill_ms: 120.0,
                per_token_ms: 15.0,
            },
        }
    }
}

impl ErrorModel {
    pub fn without_overthinking(mut self) -> Self {
        self.overthinking_penalty = 0.0;
        self
    }

    /// A model whose every attempt hits.
    pub fn perfect() -> Self {
        let always = SuccessCurve::Constant { p: 1.0 };
        Self {
            fast: always,
            with_summary: always,
            with_focus: always,
            overthinking_penalty: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, c) in [
            ("fast", self.fast),
            ("with_summary", self.with_summary),
            ("with_focus", self.with_focus),
        ] {
            let ok = match c {
                SuccessCurve::Constant { p } => (0.0..=1.0).contains(&p),
                SuccessCurve::DistractorsBelow { .. } => true,
                SuccessCurve::Linear { base, slope, floor } => {
                    base.is_finite() && slope.is_finite() && (0.0..=1.0).contains(&floor)
                }
            };
            if !ok {
                return Err(format!("invalid {name} curve {c:?}"));
            }
        }
        if !(0.0..=1.0).contains(&self.overthinking_penalty) {
            return Err(format!("overthinking_penalty {}", self.overthinking_penalty));
        }
        if !(0.0..1.0).contains(&self.first_token.other_mass) {
            return Err(format!("other_mass {}", self.first_token.other_mass));
        }
        if self.latency.prefill_ms < 0.0 || self.latency.per_token_ms < 0.0 {
            return Err("negative latency".into());
        }
        Ok(())
    }

    fn hit_probability(&self, scene: &SyntheticScene, curve: SuccessCurve, reasoning: bool) -> f64 {
        let mut p = curve.probability(scene);
        if reasoning && complexity(scene) <= self.simple_max_complexity {
            p -= self.overthinking_penalty;
        }
        p.clamp(0.0, 1.0)
    }
}

/// Splits text the way the mock counts tokens: each marker is one token,
/// other text is chunked into runs of at most four characters.
pub fn mock_tokens(text: &str) -> Vec<&str> {
    let marker_at = |s: &str| MARKERS.iter().find(|m| s.starts_with(**m)).map(|m| m.len());
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(len) = marker_at(rest) {
            out.push(&rest[..len]);
            rest = &rest[len..];
            continue;
        }
        let mut end = 0;
        for (n, (i, c)) in rest.char_indices().enumerate() {
            if n == 4 || (i > 0 && marker_at(&rest[i..]).is_some()) {
                break;
            }
            end = i + c.len_utf8();
        }
        out.push(&rest[..end]);
        rest = &rest[end..];
    }
    out
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn kind_word(k: ElementKind) -> &'static str {
    match k {
        ElementKind::Text => "text",
        ElementKind::IconWidget => "icon widget",
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    scenes: HashMap<String, SyntheticScene>,
    model: ErrorModel,
    seed: u64,
    precision: Precision,
    max_in_flight: usize,
}

impl MockBackend {
    pub fn new(
        scenes: impl IntoIterator<Item = SyntheticScene>,
        model: ErrorModel,
        seed: u64,
    ) -> Self {
        Self {
            scenes: scenes
                .into_iter()
                .map(|s| (s.id().to_string(), s))
                .collect(),
            model,
            seed,
            precision: DEFAULT_MOCK_PRECISION,
            max_in_flight: 8,
        }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    pub fn scene(&self, uri: &str) -> Result<&SyntheticScene, BackendError> {
        self.scenes
            .get(uri)
            .ok_or_else(|| BackendError::UnknownScene(uri.to_string()))
    }

    pub fn first_token_dist(&self, scene: &SyntheticScene) -> FirstTokenDist {
        self.model.first_token.dist(complexity(scene))
    }

    /// The interface summary this mock produces for `scene`.
    pub fn summary_text(&self, scene: &SyntheticScene) -> String {
        let n = scene.elements().len();
        let icons = scene
            .elements()
            .iter()
            .filter(|e| e.kind == ElementKind::IconWidget)
            .count();
        let target = scene.target();
        format!(
            "{} interface with {n} elements: {} text elements and {icons} icon widgets. \
             The requested control sits {} level(s) deep among {} similar {} elements.",
            scene.platform(),
            n - icons,
            scene.depth(),
            scene.distractor_count(),
            kind_word(target.kind),
        )
    }

    /// The focused analysis this mock produces for `scene`.
    pub fn focus_text(&self, scene: &SyntheticScene) -> String {
        let target = scene.target();
        let c = center(&target.bbox);
        let neighbour = scene
            .elements()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != scene.target_index())
            .map(|(_, e)| {
                let o = center(&e.bbox);
                ((o.x() - c.x()).powi(2) + (o.y() - c.y()).powi(2), &e.label)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, l)| format!("\"{l}\""))
            .unwrap_or_else(|| "nothing".into());
        format!(
            "Candidate \"{}\" is a {} around ({:.2}, {:.2}), {:.0}% of the screen wide; \
             {} look-alike elements compete and its nearest neighbour is {neighbour}.",
            target.label,
            kind_word(target.kind),
            c.x(),
            c.y(),
            target.bbox.width() * 100.0,
            scene.distractor_count(),
        )
    }

    fn uniform(&self, seed: u64, scene: &SyntheticScene) -> (f64, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(scene.id()));
        (rng.random::<f64>(), rng)
    }

    fn miss_point(&self, scene: &SyntheticScene, rng: &mut ChaCha8Rng) -> NormPoint {
        let target = scene.target().bbox;
        let mut others: Vec<NormPoint> = scene
            .elements()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != scene.target_index())
            .map(|(_, e)| center(&e.bbox))
            .collect();
        others.shuffle(rng);
        let corners = [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)]
            .map(|(x, y)| NormPoint::new(x, y).expect("corner in range"));
        others
            .into_iter()
            .chain(corners)
            .map(|p| quantize(p, self.precision))
            .find(|p| !hit(*p, &target))
            // Only a full-screen target cannot be missed.
            .unwrap_or_else(|| quantize(center(&target), self.precision))
    }

    fn ground_text(&self, req: &GenerationRequest, scene: &SyntheticScene, dist: &FirstTokenDist) -> String {
        let summary = self.summary_text(scene);
        let focus = self.focus_text(scene);
        let has_summary = req.prompt.contains(&summary);
        let has_focus = has_summary && req.prompt.contains(&focus);
        let slow_form = match req.mode_hint {
            ModeHint::ForceSlow => true,
            ModeHint::ForceFast => false,
            ModeHint::Free => dist.p_summary() > dist.p_ground(),
        };
        let curve = if has_focus {
            self.model.with_focus
        } else if has_summary {
            self.model.with_summary
        } else if slow_form {
            self.model.with_focus
        } else {
            self.model.fast
        };
        let p = self
            .model
            .hit_probability(scene, curve, has_summary || slow_form);

        let (u, mut rng) = self.uniform(req.seed.unwrap_or(self.seed), scene);
        let (point, precision) = match snap_center(&scene.target().bbox, self.precision) {
            Some(found) if u < p => found,
            _ => (self.miss_point(scene, &mut rng), self.precision),
        };
        let chain = if slow_form {
            Chain::Slow(SlowChain::new(summary, Some(focus), point).expect("mock bodies are marker-free"))
        } else {
            Chain::Fast(FastChain { point })
        };
        render_chain(&chain, precision)
    }
}

impl Backend for MockBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let scene = self.scene(req.screenshot.uri())?;
        let dist = self.first_token_dist(scene);
        let full = match req.task {
            GenerationTask::Summarize => self.summary_text(scene),
            GenerationTask::Focus => self.focus_text(scene),
            GenerationTask::Ground => self.ground_text(req, scene, &dist),
        };
        let tokens = mock_tokens(&full);
        let n = tokens.len().min(req.max_new_tokens() as usize);
        let text = tokens[..n].concat();
        let latency_ms = self.model.latency.prefill_ms + self.model.latency.per_token_ms * n as f64;
        Ok(GenerationResult {
            text,
            first_token_dist: dist,
            latency_ms,
        })
    }

    fn health(&self) -> Result<String, BackendError> {
        Ok("mock".to_string())
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{classify_first_token, parse_chain, FirstToken};
    use crate::scenes::{generate_scenes, SceneElement, SceneGenParams};
    use crate::sample::Platform;
    use crate::geometry::NormBBox;

    fn corpus(n: usize, seed: u64) -> Vec<SyntheticScene> {
        generate_scenes(&SceneGenParams {
            n_scenes: n,
            seed,
            ..Default::default()
        })
        .unwrap()
        .0
    }

    fn ground(scene: &SyntheticScene, prompt: &str, hint: ModeHint) -> GenerationRequest {
        GenerationRequest::new(scene.screenshot(), prompt, GenerationTask::Ground, hint)
    }

    fn is_hit(text: &str, scene: &SyntheticScene) -> bool {
        hit(parse_chain(text).unwrap().point(), &scene.target().bbox)
    }

    #[test]
    fn tokens_cover_text() {
        let t = "<|summary_start|>abcdefghi<|summary_end|><|grounding_start|>(0.1,0.2)<|grounding_end|>";
        let toks = mock_tokens(t);
        assert_eq!(toks.concat(), t);
        assert_eq!(toks[0], "<|summary_start|>");
        assert_eq!(toks[1], "abcd");
        assert_eq!(toks[3], "i");
        assert_eq!(toks[4], "<|summary_end|>");
        assert!(mock_tokens("").is_empty());
        assert_eq!(mock_tokens("héllo").concat(), "héllo");
    }

    #[test]
    fn forced_modes_open_with_marker() {
        let scenes = corpus(30, 1);
        let b = MockBackend::new(scenes.clone(), ErrorModel::default(), 9);
        for s in &scenes {
            let fast = b.generate(&ground(s, "p", ModeHint::ForceFast)).unwrap();
            assert_eq!(classify_first_token(&fast.text), FirstToken::FastLead);
            let slow = b.generate(&ground(s, "p", ModeHint::ForceSlow)).unwrap();
            assert_eq!(classify_first_token(&slow.text), FirstToken::SlowLead);
            assert!(parse_chain(&slow.text).unwrap().has_focus());
            assert!(slow.latency_ms > fast.latency_ms);
        }
    }

    #[test]
    fn identical_requests_identical_results() {
        let scenes = corpus(10, 2);
        let a = MockBackend::new(scenes.clone(), ErrorModel::default(), 5);
        let b = MockBackend::new(scenes.clone(), ErrorModel::default(), 5);
        for s in &scenes {
            let r = ground(s, "p", ModeHint::Free);
            assert_eq!(a.generate(&r).unwrap(), a.generate(&r).unwrap());
            assert_eq!(a.generate(&r).unwrap(), b.generate(&r).unwrap());
        }
    }

    #[test]
    fn unknown_scene() {
        let b = MockBackend::new(corpus(1, 0), ErrorModel::default(), 0);
        let shot = crate::geometry::ScreenshotRef::new("nope", 1, 1).unwrap();
        let r = GenerationRequest::new(shot, "p", GenerationTask::Ground, ModeHint::Free);
        assert_eq!(b.generate(&r), Err(BackendError::UnknownScene("nope".into())));
    }

    #[test]
    fn perfect_model_always_hits() {
        let scenes = corpus(100, 3);
        let b = MockBackend::new(scenes.clone(), ErrorModel::perfect(), 0);
        for s in &scenes {
            for hint in [ModeHint::ForceFast, ModeHint::ForceSlow, ModeHint::Free] {
                assert!(is_hit(&b.generate(&ground(s, "p", hint)).unwrap().text, s));
            }
        }
    }

    #[test]
    fn threshold_model_walkthrough() {
        // Four same-kind distractors: fast needs < 3, summary-assisted needs < 6.
        let el = |x: f64, kind| SceneElement {
            bbox: NormBBox::new(x, 0.1, x + 0.1, 0.2).unwrap(),
            kind,
            label: format!("e{x}"),
        };
        let elements: Vec<_> = (0..5).map(|i| el(i as f64 * 0.15, ElementKind::IconWidget)).collect();
        let scene = SyntheticScene::new("s4", Platform::Web, (100, 100), elements, 0, 0, "click e0").unwrap();
        assert_eq!(scene.distractor_count(), 4);
        let model = ErrorModel {
            fast: SuccessCurve::DistractorsBelow { limit: 3 },
            with_summary: SuccessCurve::DistractorsBelow { limit: 6 },
            with_focus: SuccessCurve::Constant { p: 1.0 },
            overthinking_penalty: 0.0,
            ..ErrorModel::default()
        };
        let b = MockBackend::new([scene.clone()], model, 0);
        let stage1 = b.generate(&ground(&scene, "find", ModeHint::ForceFast)).unwrap();
        assert!(!is_hit(&stage1.text, &scene));
        let prompt = format!("find\nInterface summary: {}", b.summary_text(&scene));
        let stage2 = b.generate(&ground(&scene, &prompt, ModeHint::ForceFast)).unwrap();
        assert!(is_hit(&stage2.text, &scene));
    }

    #[test]
    fn overthinking_penalty_lowers_slow_accuracy_on_simple_scenes() {
        let scenes = corpus(4000, 4);
        let model = ErrorModel {
            fast: SuccessCurve::Constant { p: 0.9 },
            with_summary: SuccessCurve::Constant { p: 0.9 },
            with_focus: SuccessCurve::Constant { p: 0.9 },
            overthinking_penalty: 0.2,
            simple_max_complexity: f64::INFINITY,
            ..ErrorModel::default()
        };
        let b = MockBackend::new(scenes.clone(), model, 21);
        let (mut fast, mut slow) = (0usize, 0usize);
        for s in &scenes {
            fast += is_hit(&b.generate(&ground(s, "p", ModeHint::ForceFast)).unwrap().text, s) as usize;
            slow += is_hit(&b.generate(&ground(s, "p", ModeHint::ForceSlow)).unwrap().text, s) as usize;
        }
        let n = scenes.len() as f64;
        let (fa, sa) = (fast as f64 / n, slow as f64 / n);
        assert!((fa - 0.9).abs() < 0.02, "fast accuracy {fa}");
        assert!((sa - (fa - 0.2)).abs() < 0.02, "slow {sa} vs fast {fa}");
    }

    #[test]
    fn complex_scenes_lean_slow() {
        let m = FirstTokenModel {
            midpoint: 6.0,
            steepness: 0.8,
            other_mass: 0.02,
        };
        let simple = m.dist(0.0);
        let complex = m.dist(12.0);
        assert!(simple.p_ground() > simple.p_summary());
        assert!(complex.p_summary() > complex.p_ground());
        assert!((simple.p_summary() + simple.p_ground() + simple.p_other() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_limits_tokens_and_latency() {
        let scenes = corpus(1, 8);
        let b = MockBackend::new(scenes.clone(), ErrorModel::default(), 0);
        let r = ground(&scenes[0], "p", ModeHint::ForceSlow).with_max_new_tokens(8).unwrap();
        let out = b.generate(&r).unwrap();
        assert_eq!(mock_tokens(&out.text).len(), 8);
        let lat = b.model().latency;
        assert_eq!(out.latency_ms, lat.prefill_ms + 8.0 * lat.per_token_ms);
    }

    #[test]
    fn annotations_are_marker_free() {
        let scenes = corpus(50, 6);
        let b = MockBackend::new(scenes.clone(), ErrorModel::default(), 0);
        for s in &scenes {
            for t in [b.summary_text(s), b.focus_text(s)] {
                assert!(!MARKERS.iter().any(|m| t.contains(m)));
            }
        }
    }
}
