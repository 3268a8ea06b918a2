//! Dual-mode GUI grounding: coordinate geometry, the reasoning-chain grammar,
//! fast/slow mode switching, data synthesis and evaluation.

pub mod backend;
pub mod chain;
pub mod dataset;
pub mod geometry;
pub mod sample;
pub mod scenes;
pub mod switching;
pub mod synthesis;
pub mod eval;

mod par;

pub use chain::{parse_chain, render_chain, Chain, ChainError, FastChain, Precision, SlowChain};
pub use geometry::{center, hit, normalize_bbox, GeometryError, NormBBox, NormPoint, ScreenshotRef};
pub use sample::{ElementKind, GroundingSample, Platform};
pub use switching::{select_mode, FirstTokenDist, Mode, ModeDecision, SwitchPolicy, TieBreak};
