//! 68-point facial landmarks, mouth crops and mouth-openness measurement.
//!
//! Points follow the usual 68-point convention. Accessors take 1-based
//! indices so that code reads like the landmark charts: the mouth is points
//! 49–68, the inner lip contour 61–68, the vertical inner-lip pair 63/67 and
//! the inner corners 61/65.

mod cache;
mod template;
mod toy;

use std::fmt;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{read_landmark_cache, write_landmark_cache, CachedProvider};
pub use template::{landmarks_from_boxes, PixelBox};
pub use toy::{ToyColors, ToyProvider};

pub const NUM_LANDMARKS: usize = 68;
/// 1-based index range of the mouth points.
pub const MOUTH: std::ops::RangeInclusive<usize> = 49..=68;
/// 1-based index range of the outer lip contour.
pub const OUTER_LIP: std::ops::RangeInclusive<usize> = 49..=60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandmarkError {
    #[error("landmark set has {0} points, expected 68")]
    WrongPointCount(usize),
    #[error("mouth region of frame {frame} has zero area")]
    DegenerateBox { frame: usize },
    #[error("inner-lip width is zero in frame {frame}")]
    ZeroWidth { frame: usize },
    #[error("landmark cache {path}: line {line}: {reason}")]
    MalformedCache {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("landmark cache i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    points: Vec<Point>,
    pub confidence: f64,
    pub frame_index: usize,
}

impl LandmarkFrame {
    pub fn new(points: Vec<Point>, confidence: f64, frame_index: usize) -> Result<Self, LandmarkError> {
        if points.len() != NUM_LANDMARKS {
            return Err(LandmarkError::WrongPointCount(points.len()));
        }
        Ok(Self {
            points,
            confidence: confidence.clamp(0.0, 1.0),
            frame_index,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Point by 1-based landmark number.
    pub fn point(&self, number: usize) -> Point {
        self.points[number - 1]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| Point::new(p.x + dx, p.y + dy))
            .collect();
        Self {
            points,
            confidence: self.confidence,
            frame_index: self.frame_index,
        }
    }

    /// Axis-aligned bounds `(x0, y0, x1, y1)` of the given 1-based points.
    pub fn bounds(&self, numbers: std::ops::RangeInclusive<usize>) -> (f64, f64, f64, f64) {
        numbers.map(|n| self.point(n)).fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        )
    }

    /// Outer-lip box height over width; the auxiliary pose feature used when
    /// matching global frames.
    pub fn mouth_aspect(&self) -> f64 {
        let (x0, y0, x1, y1) = self.bounds(OUTER_LIP);
        let w = x1 - x0;
        if w > 0.0 {
            (y1 - y0) / w
        } else {
            0.0
        }
    }
}

/// Source of facial landmarks for video frames.
///
/// Implementations may keep internal state (trackers, caches); use one
/// instance per worker. When several faces are present the largest one is
/// reported.
pub trait LandmarkProvider {
    /// Landmarks for `frame`, or `None` when no face is found.
    fn detect(&mut self, frame: &RgbImage, frame_index: usize) -> Option<LandmarkFrame>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpennessScore {
    pub gap: f64,
    pub width: f64,
    pub ratio: f64,
    pub frame_index: usize,
}

/// Inner-lip gap (63–67) over inner-lip width (61–65).
pub fn openness(lm: &LandmarkFrame) -> Result<OpennessScore, LandmarkError> {
    let gap = lm.point(63).distance(lm.point(67));
    let width = lm.point(61).distance(lm.point(65));
    if width <= 0.0 {
        return Err(LandmarkError::ZeroWidth {
            frame: lm.frame_index,
        });
    }
    Ok(OpennessScore {
        gap,
        width,
        ratio: gap / width,
        frame_index: lm.frame_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropConfig {
    pub height: u32,
    pub width: u32,
    /// Fraction of the mouth box size added on each side.
    pub margin: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 144,
            margin: 0.2,
        }
    }
}

/// Crop region in pixel-centre coordinates: `(x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MouthImage {
    pub pixels: RgbImage,
    pub source_frame: usize,
    pub region: CropBox,
}

/// Box around the mouth points widened by `margin` on each side.
pub fn mouth_box(lm: &LandmarkFrame, margin: f64) -> Result<CropBox, LandmarkError> {
    let (x0, y0, x1, y1) = lm.bounds(MOUTH);
    let (w, h) = (x1 - x0, y1 - y0);
    if !(w > 0.0 && h > 0.0) {
        return Err(LandmarkError::DegenerateBox {
            frame: lm.frame_index,
        });
    }
    Ok(CropBox {
        x0: x0 - margin * w,
        y0: y0 - margin * h,
        x1: x1 + margin * w,
        y1: y1 + margin * h,
    })
}

pub fn crop_mouth(
    frame: &RgbImage,
    lm: &LandmarkFrame,
    cfg: &CropConfig,
) -> Result<MouthImage, LandmarkError> {
    let region = mouth_box(lm, cfg.margin)?;
    let pixels = resample(frame, &region, cfg.width, cfg.height);
    Ok(MouthImage {
        pixels,
        source_frame: lm.frame_index,
        region,
    })
}

/// Bilinear resampling of `region` onto an `out_w × out_h` grid; samples
/// outside the frame clamp to the border.
fn resample(frame: &RgbImage, region: &CropBox, out_w: u32, out_h: u32) -> RgbImage {
    let (fw, fh) = frame.dimensions();
    let max_x = (fw - 1) as f64;
    let max_y = (fh - 1) as f64;
    let sx = (region.x1 - region.x0) / out_w as f64;
    let sy = (region.y1 - region.y0) / out_h as f64;
    RgbImage::from_fn(out_w, out_h, |c, r| {
        let x = (region.x0 + (c as f64 + 0.5) * sx).clamp(0.0, max_x);
        let y = (region.y0 + (r as f64 + 0.5) * sy).clamp(0.0, max_y);
        let (xi, yi) = (x.floor(), y.floor());
        let (fx, fy) = (x - xi, y - yi);
        let (x0, y0) = (xi as u32, yi as u32);
        let (x1, y1) = ((x0 + 1).min(fw - 1), (y0 + 1).min(fh - 1));
        let p00 = frame.get_pixel(x0, y0);
        let p10 = frame.get_pixel(x1, y0);
        let p01 = frame.get_pixel(x0, y1);
        let p11 = frame.get_pixel(x1, y1);
        let mut out = [0u8; 3];
        for ch in 0..3 {
            let top = p00[ch] as f64 * (1.0 - fx) + p10[ch] as f64 * fx;
            let bottom = p01[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
            out[ch] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}
