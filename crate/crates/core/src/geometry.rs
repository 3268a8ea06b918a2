//! Normalized screen geometry and the point-in-box hit criterion.
//!
//! All coordinates are fractions of the screenshot extent in `[0, 1]`.
//! Comparisons are exact on the stored `f64` values: a prediction is a hit
//! iff `x_min <= x <= x_max` and `y_min <= y <= y_max`, bounds inclusive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("coordinate {name}={value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("inverted box: {axis}_min {min} > {axis}_max {max}")]
    Inverted { axis: &'static str, min: f64, max: f64 },
    #[error("screenshot dimensions must be positive, got {width}x{height}")]
    EmptyScreenshot { width: u32, height: u32 },
    #[error("pixel box ({left},{top},{right},{bottom}) outside {width}x{height} frame")]
    OutOfFrame {
        left: i64,
        top: i64,
        right: i64,
        bottom: i64,
        width: u32,
        height: u32,
    },
    #[error("inverted pixel box ({left},{top},{right},{bottom})")]
    InvertedPixels {
        left: i64,
        top: i64,
        right: i64,
        bottom: i64,
    },
}

fn check_unit(name: &'static str, value: f64) -> Result<f64, GeometryError> {
    // NaN fails the range check as well.
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(GeometryError::OutOfRange { name, value })
    }
}

/// A point in normalized screen space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormPoint {
    x: f64,
    y: f64,
}

impl NormPoint {
    pub fn new(x: f64, y: f64) -> Result<Self, GeometryError> {
        Ok(Self {
            x: check_unit("x", x)?,
            y: check_unit("y", y)?,
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }
}

impl<'de> Deserialize<'de> for NormPoint {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x: f64,
            y: f64,
        }
        let raw = Raw::deserialize(de)?;
        NormPoint::new(raw.x, raw.y).map_err(serde::de::Error::custom)
    }
}

/// An axis-aligned box in normalized screen space. Zero-area boxes are legal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl NormBBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let x_min = check_unit("x_min", x_min)?;
        let y_min = check_unit("y_min", y_min)?;
        let x_max = check_unit("x_max", x_max)?;
        let y_max = check_unit("y_max", y_max)?;
        if x_min > x_max {
            return Err(GeometryError::Inverted {
                axis: "x",
                min: x_min,
                max: x_max,
            });
        }
        if y_min > y_max {
            return Err(GeometryError::Inverted {
                axis: "y",
                min: y_min,
                max: y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Component-wise containment of `other` in `self`.
    pub fn contains_box(&self, other: &NormBBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }
}

impl Serialize for NormBBox {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(ser)
    }
}

impl<'de> Deserialize<'de> for NormBBox {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let raw = <[f64; 4]>::deserialize(de)?;
        NormBBox::from_array(raw).map_err(serde::de::Error::custom)
    }
}

/// Reference to a screenshot by locator; the image itself is never decoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ScreenshotRef {
    uri: String,
    width_px: u32,
    height_px: u32,
}

impl ScreenshotRef {
    pub fn new(uri: impl Into<String>, width_px: u32, height_px: u32) -> Result<Self, GeometryError> {
        if width_px == 0 || height_px == 0 {
            return Err(GeometryError::EmptyScreenshot {
                width: width_px,
                height: height_px,
            });
        }
        Ok(Self {
            uri: uri.into(),
            width_px,
            height_px,
        })
    }

    pub fn uri(&self) -> &str {
        &self.uri
    }

    pub fn width_px(&self) -> u32 {
        self.width_px
    }

    pub fn height_px(&self) -> u32 {
        self.height_px
    }
}

impl<'de> Deserialize<'de> for ScreenshotRef {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            uri: String,
            width_px: u32,
            height_px: u32,
        }
        let raw = Raw::deserialize(de)?;
        ScreenshotRef::new(raw.uri, raw.width_px, raw.height_px).map_err(serde::de::Error::custom)
    }
}

/// The hit criterion: inclusive containment of a point in a box.
pub fn hit(p: NormPoint, b: &NormBBox) -> bool {
    b.x_min <= p.x && p.x <= b.x_max && b.y_min <= p.y && p.y <= b.y_max
}

pub fn center(b: &NormBBox) -> NormPoint {
    // The midpoint of two values in [0,1] stays in [0,1] and between them.
    NormPoint {
        x: (b.x_min + b.x_max) / 2.0,
        y: (b.y_min + b.y_max) / 2.0,
    }
}

/// Converts a `(left, top, right, bottom)` pixel box into normalized space.
pub fn normalize_bbox(pixel_box: [i64; 4], s: &ScreenshotRef) -> Result<NormBBox, GeometryError> {
    let [left, top, right, bottom] = pixel_box;
    if left > right || top > bottom {
        return Err(GeometryError::InvertedPixels {
            left,
            top,
            right,
            bottom,
        });
    }
    let (w, h) = (i64::from(s.width_px), i64::from(s.height_px));
    if left < 0 || top < 0 || right > w || bottom > h {
        return Err(GeometryError::OutOfFrame {
            left,
            top,
            right,
            bottom,
            width: s.width_px,
            height: s.height_px,
        });
    }
    let (wf, hf) = (w as f64, h as f64);
    NormBBox::new(
        left as f64 / wf,
        top as f64 / hf,
        right as f64 / wf,
        bottom as f64 / hf,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bbox(a: f64, b: f64, c: f64, d: f64) -> NormBBox {
        NormBBox::new(a, b, c, d).unwrap()
    }

    fn pt(x: f64, y: f64) -> NormPoint {
        NormPoint::new(x, y).unwrap()
    }

    #[test]
    fn hit_examples() {
        let b = bbox(0.40, 0.30, 0.60, 0.40);
        assert!(hit(pt(0.49, 0.33), &b));
        assert!(hit(pt(0.40, 0.35), &b));
        assert!(!hit(pt(0.0, 0.0), &bbox(0.5, 0.5, 0.6, 0.6)));
    }

    #[test]
    fn center_examples() {
        assert_eq!(center(&bbox(0.0, 0.0, 1.0, 1.0)), pt(0.5, 0.5));
        assert_eq!(center(&bbox(0.2, 0.2, 0.2, 0.2)), pt(0.2, 0.2));
        let c = center(&bbox(0.40, 0.30, 0.60, 0.40));
        assert!((c.x() - 0.50).abs() < 1e-12);
        assert!((c.y() - 0.35).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let s = ScreenshotRef::new("s", 1920, 1080).unwrap();
        assert_eq!(normalize_bbox([0, 0, 1920, 1080], &s).unwrap(), bbox(0.0, 0.0, 1.0, 1.0));
        assert_eq!(
            normalize_bbox([960, 540, 960, 540], &s).unwrap(),
            bbox(0.5, 0.5, 0.5, 0.5)
        );
        assert_eq!(
            normalize_bbox([480, 270, 960, 540], &s).unwrap(),
            bbox(0.25, 0.25, 0.5, 0.5)
        );
    }

    #[test]
    fn normalize_rejects_bad_pixels() {
        let s = ScreenshotRef::new("s", 100, 100).unwrap();
        assert!(matches!(
            normalize_bbox([10, 10, 5, 20], &s),
            Err(GeometryError::InvertedPixels { .. })
        ));
        assert!(matches!(
            normalize_bbox([0, 0, 101, 50], &s),
            Err(GeometryError::OutOfFrame { .. })
        ));
        assert!(matches!(
            normalize_bbox([-1, 0, 10, 50], &s),
            Err(GeometryError::OutOfFrame { .. })
        ));
    }

    #[test]
    fn construction_rejects_invalid() {
        assert!(NormPoint::new(1.01, 0.5).is_err());
        assert!(NormPoint::new(f64::NAN, 0.5).is_err());
        assert!(NormBBox::new(0.6, 0.1, 0.5, 0.2).is_err());
        assert!(NormBBox::new(0.1, 0.3, 0.5, 0.2).is_err());
        assert!(ScreenshotRef::new("x", 0, 10).is_err());
    }

    #[test]
    fn degenerate_box_hits_only_its_point() {
        let b = bbox(0.3, 0.3, 0.3, 0.3);
        assert!(hit(pt(0.3, 0.3), &b));
        assert!(!hit(pt(0.3, 0.300001), &b));
    }

    #[test]
    fn serde_box_is_array() {
        let b = bbox(0.1, 0.2, 0.3, 0.4);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[0.1,0.2,0.3,0.4]");
        assert!(serde_json::from_str::<NormBBox>("[0.5,0.2,0.3,0.4]").is_err());
    }

    fn arb_box() -> impl Strategy<Value = NormBBox> {
        (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(a, b, c, d)| {
            NormBBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn center_always_hits(b in arb_box()) {
            prop_assert!(hit(center(&b), &b));
        }

        #[test]
        fn hit_monotone_in_containing_box(
            b in arb_box(),
            grow in (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64),
            x in 0.0..=1.0f64,
            y in 0.0..=1.0f64,
        ) {
            let outer = NormBBox::new(
                b.x_min() * (1.0 - grow.0),
                b.y_min() * (1.0 - grow.1),
                b.x_max() + (1.0 - b.x_max()) * grow.2,
                b.y_max() + (1.0 - b.y_max()) * grow.3,
            ).unwrap();
            prop_assert!(outer.contains_box(&b));
            let p = NormPoint::new(x, y).unwrap();
            if hit(p, &b) {
                prop_assert!(hit(p, &outer));
            }
        }

        #[test]
        fn normalize_roundtrips_pixels(
            w in 1u32..5000, h in 1u32..5000,
            a in 0.0..=1.0f64, b in 0.0..=1.0f64, c in 0.0..=1.0f64, d in 0.0..=1.0f64,
        ) {
            let s = ScreenshotRef::new("s", w, h).unwrap();
            let xs = [(a * w as f64) as i64, (c * w as f64) as i64];
            let ys = [(b * h as f64) as i64, (d * h as f64) as i64];
            let px = [xs[0].min(xs[1]), ys[0].min(ys[1]), xs[0].max(xs[1]), ys[0].max(ys[1])];
            let n = normalize_bbox(px, &s).unwrap();
            let back = [
                (n.x_min() * w as f64).round() as i64,
                (n.y_min() * h as f64).round() as i64,
                (n.x_max() * w as f64).round() as i64,
                (n.y_max() * h as f64).round() as i64,
            ];
            prop_assert_eq!(back, px);
        }
    }
}
