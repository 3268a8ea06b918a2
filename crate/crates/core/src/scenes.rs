//! Seeded generator of structured GUI scenes.
//!
//! A scene is a flat list of labeled elements laid out on a jittered grid,
//! with one target. It stands in for a screenshot: the mock backend reads
//! the scene's complexity features instead of pixels.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{NormBBox, ScreenshotRef};
use crate::sample::{ElementKind, GroundingSample, Platform};

pub const SYNTHETIC_SOURCE: &str = "synthetic";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("invalid scene {id}: {reason}")]
    InvalidScene { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneElement {
    pub bbox: NormBBox,
    pub kind: ElementKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticScene {
    id: String,
    platform: Platform,
    width_px: u32,
    height_px: u32,
    target: usize,
    depth: u32,
    distractor_count: u32,
    instruction: String,
    elements: Vec<SceneElement>,
}

#[derive(Deserialize)]
struct RawScene {
    id: String,
    platform: Platform,
    width_px: u32,
    height_px: u32,
    target: usize,
    depth: u32,
    distractor_count: u32,
    instruction: String,
    elements: Vec<SceneElement>,
}

impl<'de> Deserialize<'de> for SyntheticScene {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let r = RawScene::deserialize(de)?;
        SyntheticScene::new(
            r.id,
            r.platform,
            (r.width_px, r.height_px),
            r.elements,
            r.target,
            r.depth,
            r.instruction,
        )
        .and_then(|s| {
            if s.distractor_count == r.distractor_count {
                Ok(s)
            } else {
                Err(SceneError::InvalidScene {
                    id: s.id,
                    reason: format!(
                        "distractor_count {} does not match elements ({})",
                        r.distractor_count, s.distractor_count
                    ),
                })
            }
        })
        .map_err(serde::de::Error::custom)
    }
}

impl SyntheticScene {
    pub fn new(
        id: impl Into<String>,
        platform: Platform,
        (width_px, height_px): (u32, u32),
        elements: Vec<SceneElement>,
        target: usize,
        depth: u32,
        instruction: impl Into<String>,
    ) -> Result<Self, SceneError> {
        let id = id.into();
        let invalid = |reason: String| SceneError::InvalidScene {
            id: id.clone(),
            reason,
        };
        if width_px == 0 || height_px == 0 {
            return Err(invalid("empty resolution".into()));
        }
        let Some(t) = elements.get(target) else {
            return Err(invalid(format!("target index {target} out of range")));
        };
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err(invalid("empty instruction".into()));
        }
        let distractor_count = elements
            .iter()
            .enumerate()
            .filter(|(i, e)| *i != target && e.kind == t.kind)
            .count() as u32;
        Ok(Self {
            id,
            platform,
            width_px,
            height_px,
            target,
            depth,
            distractor_count,
            instruction,
            elements,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn platform(&self) -> Platform {
        self.platform
    }

    pub fn elements(&self) -> &[SceneElement] {
        &self.elements
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn target(&self) -> &SceneElement {
        &self.elements[self.target]
    }

    pub fn distractor_count(&self) -> u32 {
        self.distractor_count
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn screenshot(&self) -> ScreenshotRef {
        ScreenshotRef::new(self.id.clone(), self.width_px, self.height_px)
            .expect("scene resolution validated at construction")
    }

    pub fn to_sample(&self) -> GroundingSample {
        let target = self.target();
        GroundingSample {
            id: self.id.clone(),
            instruction: self.instruction.clone(),
            bbox: target.bbox,
            screenshot: self.screenshot(),
            platform: self.platform,
            element_kind: target.kind,
            source: SYNTHETIC_SOURCE.to_string(),
            category: None,
        }
    }
}

/// Scene difficulty: `distractor_count + 2 * depth`.
pub fn complexity(scene: &SyntheticScene) -> f64 {
    f64::from(scene.distractor_count) + 2.0 * f64::from(scene.depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub const fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenParams {
    pub n_scenes: usize,
    /// Total elements per scene, target included.
    pub elements: CountRange,
    /// Probability that a scene's target is an icon/widget.
    pub icon_fraction: f64,
    pub text_distractors: CountRange,
    pub icon_distractors: CountRange,
    pub text_depth: CountRange,
    pub icon_depth: CountRange,
    pub seed: u64,
}

impl Default for SceneGenParams {
    fn default() -> Self {
        Self {
            n_scenes: 1000,
            elements: CountRange::new(6, 24),
            icon_fraction: 0.4,
            text_distractors: CountRange::new(0, 6),
            icon_distractors: CountRange::new(2, 10),
            text_depth: CountRange::new(0, 2),
            icon_depth: CountRange::new(0, 3),
            seed: 0,
        }
    }
}

impl SceneGenParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidParams(m));
        for (name, r) in [
            ("elements", self.elements),
            ("text_distractors", self.text_distractors),
            ("icon_distractors", self.icon_distractors),
            ("text_depth", self.text_depth),
            ("icon_depth", self.icon_depth),
        ] {
            if r.min > r.max {
                return bad(format!("{name} range is empty ({}..={})", r.min, r.max));
            }
        }
        if self.elements.min == 0 {
            return bad("scenes need at least one element".into());
        }
        if !(0.0..=1.0).contains(&self.icon_fraction) {
            return bad(format!("icon_fraction {} outside [0, 1]", self.icon_fraction));
        }
        Ok(())
    }
}

const TEXT_LABELS: &[&str] = &[
    "Sign in", "Settings", "Search", "Submit", "Cancel", "Next", "Back", "Save", "Open file",
    "New tab", "Help", "Downloads", "Profile", "Log out", "Share", "Edit", "View", "History",
    "Bookmarks", "Preferences", "Contact us", "Pricing", "Documentation", "Checkout", "Add to cart",
    "Continue", "Accept", "Decline", "Home", "Inbox", "Drafts", "Archive", "Reply", "Forward",
    "Export", "Import", "Print", "Undo", "Redo", "Refresh",
];

const ICON_LABELS: &[&str] = &[
    "magnifier", "gear", "bell", "trash can", "pencil", "star", "heart", "plus", "close",
    "hamburger menu", "back arrow", "forward arrow", "download", "upload", "camera", "microphone",
    "play", "pause", "lock", "calendar", "folder", "paperclip", "share", "home", "user avatar",
    "cart", "filter", "refresh", "toggle switch", "slider",
];

const TEXT_VERBS: &[&str] = &["click", "tap", "select", "open", "press"];

fn resolution(p: Platform) -> (u32, u32) {
    match p {
        Platform::Mobile => (1080, 2340),
        Platform::Desktop => (1920, 1080),
        Platform::Web => (1440, 900),
    }
}

fn sample_range(rng: &mut ChaCha8Rng, r: CountRange) -> u32 {
    rng.random_range(r.min..=r.max)
}

fn round4(v: f64) -> f64 {
    ((v * 10_000.0).round() / 10_000.0).clamp(0.0, 1.0)
}

fn pick_labels(rng: &mut ChaCha8Rng, vocab: &[&str], n: usize) -> Vec<String> {
    let mut pool: Vec<&str> = vocab.to_vec();
    pool.shuffle(rng);
    let mut seen = HashSet::new();
    (0..n)
        .map(|i| {
            let base = pool[i % pool.len()];
            let mut label = base.to_string();
            let mut k = 2;
            while !seen.insert(label.clone()) {
                label = format!("{base} {k}");
                k += 1;
            }
            label
        })
        .collect()
}

fn generate_one(rng: &mut ChaCha8Rng, index: usize, p: &SceneGenParams) -> SyntheticScene {
    let platform = Platform::ALL[rng.random_range(0..Platform::ALL.len())];
    let target_kind = if rng.random_bool(p.icon_fraction) {
        ElementKind::IconWidget
    } else {
        ElementKind::Text
    };
    let n = sample_range(rng, p.elements) as usize;
    let (distractors, depth) = match target_kind {
        ElementKind::Text => (p.text_distractors, p.text_depth),
        ElementKind::IconWidget => (p.icon_distractors, p.icon_depth),
    };
    let d = (sample_range(rng, distractors) as usize).min(n - 1);
    let depth = sample_range(rng, depth);
    let other_kind = match target_kind {
        ElementKind::Text => ElementKind::IconWidget,
        ElementKind::IconWidget => ElementKind::Text,
    };

    // Slot 0 is the target until shuffled.
    let mut kinds: Vec<(bool, ElementKind)> = Vec::with_capacity(n);
    kinds.push((true, target_kind));
    kinds.extend(std::iter::repeat_n((false, target_kind), d));
    kinds.extend(std::iter::repeat_n((false, other_kind), n - 1 - d));
    kinds.shuffle(rng);

    let n_text = kinds.iter().filter(|(_, k)| *k == ElementKind::Text).count();
    let mut text_labels = pick_labels(rng, TEXT_LABELS, n_text).into_iter();
    let mut icon_labels = pick_labels(rng, ICON_LABELS, n - n_text).into_iter();

    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let mut cells: Vec<usize> = (0..rows * cols).collect();
    cells.shuffle(rng);
    let (cw, ch) = (1.0 / cols as f64, 1.0 / rows as f64);

    let mut target = 0;
    let mut elements = Vec::with_capacity(n);
    for (i, (is_target, kind)) in kinds.into_iter().enumerate() {
        let cell = cells[i];
        let (cx, cy) = ((cell % cols) as f64 * cw, (cell / cols) as f64 * ch);
        let bw = cw * rng.random_range(0.4..0.9);
        let bh = ch * rng.random_range(0.3..0.8);
        let ox = rng.random_range(0.0..(cw - bw));
        let oy = rng.random_range(0.0..(ch - bh));
        let x_min = round4(cx + ox);
        let y_min = round4(cy + oy);
        let x_max = round4(cx + ox + bw).max(x_min);
        let y_max = round4(cy + oy + bh).max(y_min);
        let label = match kind {
            ElementKind::Text => text_labels.next(),
            ElementKind::IconWidget => icon_labels.next(),
        }
        .expect("label pools sized to element counts");
        if is_target {
            target = i;
        }
        elements.push(SceneElement {
            bbox: NormBBox::new(x_min, y_min, x_max, y_max).expect("grid cell inside unit square"),
            kind,
            label,
        });
    }

    let label = &elements[target].label;
    let instruction = match target_kind {
        ElementKind::Text => {
            let verb = TEXT_VERBS[rng.random_range(0..TEXT_VERBS.len())];
            format!("{verb} \"{label}\"")
        }
        ElementKind::IconWidget => format!("click the {label} icon"),
    };

    SyntheticScene::new(
        format!("scene-{index:06}"),
        platform,
        resolution(platform),
        elements,
        target,
        depth,
        instruction,
    )
    .expect("generated scene is valid")
}

/// Generates `n_scenes` scenes and one grounding sample per scene.
pub fn generate_scenes(
    params: &SceneGenParams,
) -> Result<(Vec<SyntheticScene>, Vec<GroundingSample>), SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scenes: Vec<SyntheticScene> = (0..params.n_scenes)
        .map(|i| generate_one(&mut rng, i, params))
        .collect();
    let samples = scenes.iter().map(SyntheticScene::to_sample).collect();
    Ok((scenes, samples))
}
