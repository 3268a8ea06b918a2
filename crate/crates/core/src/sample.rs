use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{NormBBox, ScreenshotRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Mobile,
    Desktop,
    Web,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Mobile, Platform::Desktop, Platform::Web];

    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Mobile => "mobile",
            Platform::Desktop => "desktop",
            Platform::Web => "web",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Platform {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mobile" => Ok(Platform::Mobile),
            "desktop" => Ok(Platform::Desktop),
            "web" => Ok(Platform::Web),
            other => Err(format!("unknown platform {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Text,
    /// Icons and other widgets without a textual label.
    #[serde(alias = "icon", alias = "widget")]
    IconWidget,
}

impl ElementKind {
    pub const ALL: [ElementKind; 2] = [ElementKind::Text, ElementKind::IconWidget];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Text => "text",
            ElementKind::IconWidget => "icon_widget",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled grounding example: instruction, target box and screenshot.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingSample {
    pub id: String,
    pub instruction: String,
    pub bbox: NormBBox,
    pub screenshot: ScreenshotRef,
    pub platform: Platform,
    pub element_kind: ElementKind,
    pub source: String,
    /// Free-form benchmark grouping tag, carried through to reports.
    pub category: Option<String>,
}
