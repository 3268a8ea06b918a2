//! Adaptive fast/slow mode selection from first-token probabilities.
//!
//! The slow score is `alpha * p(<|summary_start|>)` and the fast score is
//! `(1 - alpha) * p(<|grounding_start|>)`; the mode with the higher score
//! wins. Raw first-position probabilities are used as-is, without
//! renormalizing over the two markers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALPHA: f64 = 0.6;

/// Slack allowed on the total probability mass.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwitchError {
    #[error("invalid first-token distribution: {0}")]
    InvalidDistribution(String),
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstTokenDist {
    p_summary: f64,
    p_ground: f64,
    p_other: f64,
}

impl FirstTokenDist {
    pub fn new(p_summary: f64, p_ground: f64, p_other: f64) -> Result<Self, SwitchError> {
        for (name, v) in [("p_summary", p_summary), ("p_ground", p_ground), ("p_other", p_other)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SwitchError::InvalidDistribution(format!("{name}={v}")));
            }
        }
        let total = p_summary + p_ground + p_other;
        if total > 1.0 + MASS_TOLERANCE {
            return Err(SwitchError::InvalidDistribution(format!("total mass {total}")));
        }
        Ok(Self {
            p_summary,
            p_ground,
            p_other,
        })
    }

    /// Builds a distribution whose residual mass is whatever the two markers leave.
    pub fn from_markers(p_summary: f64, p_ground: f64) -> Result<Self, SwitchError> {
        let other = (1.0 - p_summary - p_ground).max(0.0);
        Self::new(p_summary, p_ground, other)
    }

    pub fn p_summary(&self) -> f64 {
        self.p_summary
    }

    pub fn p_ground(&self) -> f64 {
        self.p_ground
    }

    pub fn p_other(&self) -> f64 {
        self.p_other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fast,
    Slow,
}

/// Rule applied when both adjusted scores are exactly equal and nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchPolicy {
    alpha: f64,
    tie_break: TieBreak,
}

impl SwitchPolicy {
    pub fn new(alpha: f64) -> Result<Self, SwitchError> {
        Self::with_tie_break(alpha, TieBreak::Fast)
    }

    pub fn with_tie_break(alpha: f64, tie_break: TieBreak) -> Result<Self, SwitchError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SwitchError::InvalidAlpha(alpha));
        }
        Ok(Self { alpha, tie_break })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }
}

impl Default for SwitchPolicy {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tie_break: TieBreak::Fast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub mode: Mode,
    pub p_fast_adj: f64,
    pub p_slow_adj: f64,
    /// Set when neither marker carried any adjusted mass.
    pub fallback_used: bool,
}

pub fn select_mode(d: &FirstTokenDist, pol: &SwitchPolicy) -> ModeDecision {
    let p_slow_adj = pol.alpha * d.p_summary;
    let p_fast_adj = (1.0 - pol.alpha) * d.p_ground;

    let (mode, fallback_used) = if p_slow_adj == 0.0 && p_fast_adj == 0.0 {
        (Mode::Fast, true)
    } else if p_slow_adj > p_fast_adj {
        (Mode::Slow, false)
    } else if p_fast_adj > p_slow_adj {
        (Mode::Fast, false)
    } else {
        let mode = match pol.tie_break {
            TieBreak::Fast => Mode::Fast,
            TieBreak::Slow => Mode::Slow,
        };
        (mode, false)
    };

    ModeDecision {
        mode,
        p_fast_adj,
        p_slow_adj,
        fallback_used,
    }
}
