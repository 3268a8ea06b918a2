//! Special-token reasoning chains.
//!
//! A fast chain is a single grounding segment:
//!
//! ```text
//! <|grounding_start|>(0.46,0.78)<|grounding_end|>
//! ```
//!
//! A slow chain prefixes it with an interface summary and, optionally, a
//! focused analysis, always in the order summary, focus, grounding. Markers
//! are atomic and never appear inside segment bodies; there is no escaping.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{center, hit, NormBBox, NormPoint};

pub const GROUNDING_START: &str = "<|grounding_start|>";
pub const GROUNDING_END: &str = "<|grounding_end|>";
pub const SUMMARY_START: &str = "<|summary_start|>";
pub const SUMMARY_END: &str = "<|summary_end|>";
pub const FOCUS_START: &str = "<|focus_start|>";
pub const FOCUS_END: &str = "<|focus_end|>";

pub const MARKERS: [&str; 6] = [
    GROUNDING_START,
    GROUNDING_END,
    SUMMARY_START,
    SUMMARY_END,
    FOCUS_START,
    FOCUS_END,
];

pub const DEFAULT_PRECISION: Precision = Precision(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Summary,
    Focus,
    Grounding,
}

impl SegmentKind {
    pub fn start(self) -> &'static str {
        match self {
            SegmentKind::Summary => SUMMARY_START,
            SegmentKind::Focus => FOCUS_START,
            SegmentKind::Grounding => GROUNDING_START,
        }
    }

    pub fn end(self) -> &'static str {
        match self {
            SegmentKind::Summary => SUMMARY_END,
            SegmentKind::Focus => FOCUS_END,
            SegmentKind::Grounding => GROUNDING_END,
        }
    }

    fn rank(self) -> u8 {
        match self {
            SegmentKind::Summary => 0,
            SegmentKind::Focus => 1,
            SegmentKind::Grounding => 2,
        }
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegmentKind::Summary => "summary",
            SegmentKind::Focus => "focus",
            SegmentKind::Grounding => "grounding",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("missing {0} segment")]
    MissingSegment(SegmentKind),
    #[error("unbalanced marker {marker} at byte {offset}")]
    UnbalancedToken { marker: &'static str, offset: usize },
    #[error("{found} segment out of order after {after}")]
    OrderViolation { found: SegmentKind, after: SegmentKind },
    #[error("duplicate {0} segment")]
    DuplicateSegment(SegmentKind),
    #[error("empty {0} segment")]
    EmptySegment(SegmentKind),
    #[error("malformed coordinate {0:?}")]
    MalformedCoordinate(String),
    #[error("coordinate {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("unexpected text at byte {0}")]
    TrailingGarbage(usize),
    #[error("{0} body contains a reserved marker")]
    MarkerInBody(SegmentKind),
    #[error("precision must be 1..=6 decimal places, got {0}")]
    InvalidPrecision(u8),
}

/// Decimal places used when rendering coordinates (1 to 6).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Precision(u8);

impl Precision {
    pub const MAX: u8 = 6;

    pub fn new(places: u8) -> Result<Self, ChainError> {
        if (1..=Self::MAX).contains(&places) {
            Ok(Self(places))
        } else {
            Err(ChainError::InvalidPrecision(places))
        }
    }

    pub(crate) const fn new_unchecked(places: u8) -> Self {
        Self(places)
    }

    pub fn places(self) -> u8 {
        self.0
    }
}

impl Default for Precision {
    fn default() -> Self {
        DEFAULT_PRECISION
    }
}

impl TryFrom<u8> for Precision {
    type Error = ChainError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Precision::new(v)
    }
}

impl From<Precision> for u8 {
    fn from(p: Precision) -> u8 {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastChain {
    pub point: NormPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowChain {
    summary: String,
    focus: Option<String>,
    point: NormPoint,
}

fn check_body(kind: SegmentKind, body: &str) -> Result<(), ChainError> {
    if body.trim().is_empty() {
        return Err(ChainError::EmptySegment(kind));
    }
    if MARKERS.iter().any(|m| body.contains(m)) {
        return Err(ChainError::MarkerInBody(kind));
    }
    Ok(())
}

impl SlowChain {
    pub fn new(
        summary: impl Into<String>,
        focus: Option<String>,
        point: NormPoint,
    ) -> Result<Self, ChainError> {
        let summary = summary.into();
        check_body(SegmentKind::Summary, &summary)?;
        if let Some(f) = &focus {
            check_body(SegmentKind::Focus, f)?;
        }
        Ok(Self {
            summary,
            focus,
            point,
        })
    }

    pub fn summary(&self) -> &str {
        &self.summary
    }

    pub fn focus(&self) -> Option<&str> {
        self.focus.as_deref()
    }

    pub fn point(&self) -> NormPoint {
        self.point
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Chain {
    Fast(FastChain),
    Slow(SlowChain),
}

impl Chain {
    pub fn point(&self) -> NormPoint {
        match self {
            Chain::Fast(c) => c.point,
            Chain::Slow(c) => c.point,
        }
    }

    pub fn is_slow(&self) -> bool {
        matches!(self, Chain::Slow(_))
    }

    pub fn has_focus(&self) -> bool {
        matches!(self, Chain::Slow(c) if c.focus.is_some())
    }
}

impl From<FastChain> for Chain {
    fn from(c: FastChain) -> Self {
        Chain::Fast(c)
    }
}

impl From<SlowChain> for Chain {
    fn from(c: SlowChain) -> Self {
        Chain::Slow(c)
    }
}

pub fn format_point(p: NormPoint, precision: Precision) -> String {
    let n = precision.places() as usize;
    format!("({:.n$},{:.n$})", p.x(), p.y())
}

pub fn render_chain(chain: &Chain, precision: Precision) -> String {
    let mut out = String::new();
    if let Chain::Slow(slow) = chain {
        push_segment(&mut out, SegmentKind::Summary, &slow.summary);
        if let Some(focus) = &slow.focus {
            push_segment(&mut out, SegmentKind::Focus, focus);
        }
    }
    push_segment(
        &mut out,
        SegmentKind::Grounding,
        &format_point(chain.point(), precision),
    );
    out
}

/// Round-trips a point through its rendered form at `precision`.
pub fn quantize(p: NormPoint, precision: Precision) -> NormPoint {
    parse_point(&format_point(p, precision)).expect("rendered point parses")
}

/// The box center at the coarsest precision, starting from `min`, whose
/// rendered form still hits the box. `None` only for boxes narrower than
/// the finest precision step that also miss its grid.
pub fn snap_center(b: &NormBBox, min: Precision) -> Option<(NormPoint, Precision)> {
    (min.places()..=Precision::MAX).find_map(|places| {
        let prec = Precision(places);
        let q = quantize(center(b), prec);
        hit(q, b).then_some((q, prec))
    })
}

fn push_segment(out: &mut String, kind: SegmentKind, body: &str) {
    out.push_str(kind.start());
    out.push_str(body);
    out.push_str(kind.end());
}

/// Which mode a generation opened with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstToken {
    SlowLead,
    FastLead,
    Other,
}

pub fn classify_first_token(text: &str) -> FirstToken {
    let t = text.trim_start();
    if t.starts_with(SUMMARY_START) {
        FirstToken::SlowLead
    } else if t.starts_with(GROUNDING_START) {
        FirstToken::FastLead
    } else {
        FirstToken::Other
    }
}

fn marker_at(text: &str, pos: usize) -> Option<&'static str> {
    let rest = &text[pos..];
    MARKERS.iter().copied().find(|m| rest.starts_with(m))
}

fn start_kind(marker: &str) -> Option<SegmentKind> {
    [SegmentKind::Summary, SegmentKind::Focus, SegmentKind::Grounding]
        .into_iter()
        .find(|k| k.start() == marker)
}

/// Byte offset of the next marker at or after `from`.
fn next_marker(text: &str, from: usize) -> Option<(usize, &'static str)> {
    let mut search = from;
    while let Some(rel) = text[search..].find("<|") {
        let at = search + rel;
        if let Some(m) = marker_at(text, at) {
            return Some((at, m));
        }
        search = at + 2;
    }
    None
}

fn skip_ws(text: &str, mut pos: usize) -> usize {
    while let Some(c) = text[pos..].chars().next() {
        if !c.is_whitespace() {
            break;
        }
        pos += c.len_utf8();
    }
    pos
}

fn split_segments(text: &str) -> Result<Vec<(SegmentKind, &str)>, ChainError> {
    let mut segments = Vec::new();
    let mut pos = skip_ws(text, 0);
    while pos < text.len() {
        let Some(marker) = marker_at(text, pos) else {
            return Err(ChainError::TrailingGarbage(pos));
        };
        let Some(kind) = start_kind(marker) else {
            return Err(ChainError::UnbalancedToken { marker, offset: pos });
        };
        let body_start = pos + marker.len();
        match next_marker(text, body_start) {
            Some((at, m)) if m == kind.end() => {
                segments.push((kind, &text[body_start..at]));
                pos = skip_ws(text, at + m.len());
            }
            _ => return Err(ChainError::UnbalancedToken { marker, offset: pos }),
        }
    }
    Ok(segments)
}

fn parse_decimal(s: &str) -> Option<f64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = digits.split_once('.')?;
    let ok = !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && (1..=Precision::MAX as usize).contains(&frac.len())
        && frac.bytes().all(|b| b.is_ascii_digit());
    if ok {
        s.parse().ok()
    } else {
        None
    }
}

/// Parses the body of a grounding segment, e.g. `(0.46, 0.78)`.
pub fn parse_point(body: &str) -> Result<NormPoint, ChainError> {
    let malformed = || ChainError::MalformedCoordinate(body.to_string());
    let inner = body
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(malformed)?;
    let (xs, ys) = inner.split_once(',').ok_or_else(malformed)?;
    let x = parse_decimal(xs.trim()).ok_or_else(malformed)?;
    let y = parse_decimal(ys.trim()).ok_or_else(malformed)?;
    for v in [x, y] {
        if !(0.0..=1.0).contains(&v) {
            return Err(ChainError::OutOfRange(v));
        }
    }
    NormPoint::new(x, y).map_err(|_| malformed())
}

pub fn parse_chain(text: &str) -> Result<Chain, ChainError> {
    let segments = split_segments(text)?;

    let mut last: Option<SegmentKind> = None;
    let mut summary = None;
    let mut focus = None;
    let mut grounding = None;
    for (kind, body) in segments {
        if let Some(prev) = last {
            if prev == kind {
                return Err(ChainError::DuplicateSegment(kind));
            }
            if prev.rank() > kind.rank() {
                // Anything after the grounding segment, or focus before summary.
                let dup = match kind {
                    SegmentKind::Summary => summary.is_some(),
                    SegmentKind::Focus => focus.is_some(),
                    SegmentKind::Grounding => grounding.is_some(),
                };
                if dup {
                    return Err(ChainError::DuplicateSegment(kind));
                }
                return Err(ChainError::OrderViolation { found: kind, after: prev });
            }
        }
        last = Some(kind);
        match kind {
            SegmentKind::Summary => summary = Some(body),
            SegmentKind::Focus => focus = Some(body),
            SegmentKind::Grounding => grounding = Some(body),
        }
    }

    let body = grounding.ok_or(ChainError::MissingSegment(SegmentKind::Grounding))?;
    let point = parse_point(body)?;
    match (summary, focus) {
        (None, None) => Ok(Chain::Fast(FastChain { point })),
        (None, Some(_)) => Err(ChainError::MissingSegment(SegmentKind::Summary)),
        (Some(s), f) => Ok(Chain::Slow(SlowChain::new(s, f.map(str::to_string), point)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64) -> NormPoint {
        NormPoint::new(x, y).unwrap()
    }

    const WORKED: &str = "<|grounding_start|>(0.46,0.78)<|grounding_end|>";

    #[test]
    fn renders_fast_chain() {
        let c = Chain::Fast(FastChain { point: pt(0.46, 0.78) });
        assert_eq!(render_chain(&c, DEFAULT_PRECISION), WORKED);
    }

    #[test]
    fn renders_summary_only_chain() {
        let c = Chain::Slow(SlowChain::new("S", None, pt(0.5, 0.5)).unwrap());
        assert_eq!(
            render_chain(&c, DEFAULT_PRECISION),
            "<|summary_start|>S<|summary_end|><|grounding_start|>(0.50,0.50)<|grounding_end|>"
        );
    }

    #[test]
    fn render_respects_precision() {
        let c = Chain::Fast(FastChain { point: pt(0.123456, 1.0) });
        assert_eq!(
            render_chain(&c, Precision::new(4).unwrap()),
            "<|grounding_start|>(0.1235,1.0000)<|grounding_end|>"
        );
        assert!(Precision::new(0).is_err());
        assert!(Precision::new(7).is_err());
    }

    #[test]
    fn parses_worked_example() {
        assert_eq!(
            parse_chain(WORKED).unwrap(),
            Chain::Fast(FastChain { point: pt(0.46, 0.78) })
        );
    }

    #[test]
    fn parses_full_slow_chain_with_lenient_space() {
        let t = "<|summary_start|>layout<|summary_end|><|focus_start|>red icon<|focus_end|><|grounding_start|>(0.10, 0.90)<|grounding_end|>";
        let c = parse_chain(t).unwrap();
        assert_eq!(
            c,
            Chain::Slow(SlowChain::new("layout", Some("red icon".into()), pt(0.10, 0.90)).unwrap())
        );
    }

    #[test]
    fn lenient_whitespace_and_decimals() {
        let t = "  <|summary_start|>a<|summary_end|>\n <|grounding_start|> ( 0.123456 ,1.0 ) <|grounding_end|>\n";
        let c = parse_chain(t).unwrap();
        assert_eq!(c.point(), pt(0.123456, 1.0));
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            parse_chain("<|grounding_start|>(0.46,0.78)"),
            Err(ChainError::UnbalancedToken { marker: GROUNDING_START, .. })
        ));
        assert_eq!(
            parse_chain("<|summary_start|>x<|summary_end|>"),
            Err(ChainError::MissingSegment(SegmentKind::Grounding))
        );
        assert_eq!(parse_chain(""), Err(ChainError::MissingSegment(SegmentKind::Grounding)));
        assert!(matches!(
            parse_chain("<|focus_start|>f<|focus_end|><|summary_start|>s<|summary_end|><|grounding_start|>(0.1,0.1)<|grounding_end|>"),
            Err(ChainError::OrderViolation { found: SegmentKind::Summary, after: SegmentKind::Focus })
        ));
        assert!(matches!(
            parse_chain("<|grounding_start|>(0.1,0.1)<|grounding_end|><|summary_start|>s<|summary_end|>"),
            Err(ChainError::OrderViolation { .. })
        ));
        assert_eq!(
            parse_chain("<|grounding_start|>(0.1,0.1)<|grounding_end|><|grounding_start|>(0.1,0.1)<|grounding_end|>"),
            Err(ChainError::DuplicateSegment(SegmentKind::Grounding))
        );
        assert!(matches!(
            parse_chain("<|grounding_start|>(0.1;0.1)<|grounding_end|>"),
            Err(ChainError::MalformedCoordinate(_))
        ));
        assert!(matches!(
            parse_chain("<|grounding_start|>(1,0.1)<|grounding_end|>"),
            Err(ChainError::MalformedCoordinate(_))
        ));
        assert!(matches!(
            parse_chain("<|grounding_start|>(0.1234567,0.1)<|grounding_end|>"),
            Err(ChainError::MalformedCoordinate(_))
        ));
        assert_eq!(
            parse_chain("<|grounding_start|>(1.50,0.1)<|grounding_end|>"),
            Err(ChainError::OutOfRange(1.5))
        );
        assert_eq!(
            parse_chain("<|grounding_start|>(-0.10,0.1)<|grounding_end|>"),
            Err(ChainError::OutOfRange(-0.1))
        );
        assert_eq!(
            parse_chain("The answer is <|grounding_start|>(0.1,0.1)<|grounding_end|>"),
            Err(ChainError::TrailingGarbage(0))
        );
        assert!(matches!(
            parse_chain("<|grounding_start|>(0.1,0.1)<|grounding_end|> done"),
            Err(ChainError::TrailingGarbage(_))
        ));
        assert!(matches!(
            parse_chain("<|summary_start|>a <|focus_start|> b<|summary_end|><|grounding_start|>(0.1,0.1)<|grounding_end|>"),
            Err(ChainError::UnbalancedToken { marker: SUMMARY_START, .. })
        ));
        assert!(matches!(
            parse_chain("<|grounding_end|>"),
            Err(ChainError::UnbalancedToken { marker: GROUNDING_END, .. })
        ));
        assert_eq!(
            parse_chain("<|focus_start|>f<|focus_end|><|grounding_start|>(0.1,0.1)<|grounding_end|>"),
            Err(ChainError::MissingSegment(SegmentKind::Summary))
        );
        assert_eq!(
            parse_chain("<|summary_start|>  <|summary_end|><|grounding_start|>(0.1,0.1)<|grounding_end|>"),
            Err(ChainError::EmptySegment(SegmentKind::Summary))
        );
    }

    #[test]
    fn slow_chain_rejects_marker_bodies() {
        assert_eq!(
            SlowChain::new("a<|focus_end|>", None, pt(0.1, 0.1)),
            Err(ChainError::MarkerInBody(SegmentKind::Summary))
        );
        assert_eq!(
            SlowChain::new("", None, pt(0.1, 0.1)),
            Err(ChainError::EmptySegment(SegmentKind::Summary))
        );
    }

    #[test]
    fn first_token_classification() {
        assert_eq!(classify_first_token("<|summary_start|>layout"), FirstToken::SlowLead);
        assert_eq!(classify_first_token("  \n<|grounding_start|>(0"), FirstToken::FastLead);
        assert_eq!(classify_first_token("The element is"), FirstToken::Other);
        assert_eq!(classify_first_token(""), FirstToken::Other);
    }

    #[test]
    fn fuzz_never_panics() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let alphabet: Vec<&str> = MARKERS
            .iter()
            .copied()
            .chain(["(", ")", ",", "0.5", " ", "x", "é", "<|", "|>"])
            .collect();
        for _ in 0..2_000 {
            let n = rng.random_range(0..12);
            let s: String = (0..n)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            let _ = parse_chain(&s);
        }
    }

    fn arb_body() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ,.()|<>_-]{0,40}"
            .prop_map(|s| format!("b{s}"))
            .prop_filter("no markers", |s| !MARKERS.iter().any(|m| s.contains(m)))
    }

    proptest! {
        #[test]
        fn canonical_render_is_fixpoint(
            x in 0u32..=100, y in 0u32..=100,
            summary in proptest::option::of(arb_body()),
            focus in proptest::option::of(arb_body()),
        ) {
            let point = pt(x as f64 / 100.0, y as f64 / 100.0);
            let chain = match summary {
                None => Chain::Fast(FastChain { point }),
                Some(s) => Chain::Slow(SlowChain::new(s, focus, point).unwrap()),
            };
            let text = render_chain(&chain, DEFAULT_PRECISION);
            let parsed = parse_chain(&text).unwrap();
            prop_assert_eq!(&parsed, &chain);
            prop_assert_eq!(render_chain(&parsed, DEFAULT_PRECISION), text);
        }
    }
}
