//! Degraded variants of a video: lossy re-encoding and downscaling.
//!
//! Compression strength is expressed as an H.264-style constant rate factor
//! (0–51, higher is worse) and realised with Motion JPEG. The factor maps
//! linearly onto JPEG quality so that CRF 23 → quality 75 and CRF 40 →
//! quality 15, clamped to `1..=100`.

use std::fmt;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};

use super::avi::{self, Codec};
use super::{FrameStream, VideoError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RobustnessTransform {
    Identity,
    Compression { crf: u8 },
    Rescale { scale: f64 },
}

pub const MAX_CRF: u8 = 51;

pub fn crf_to_jpeg_quality(crf: u8) -> u8 {
    let q = 75.0 - (crf as f64 - 23.0) * 60.0 / 17.0;
    q.round().clamp(1.0, 100.0) as u8
}

impl RobustnessTransform {
    pub fn validate(&self) -> Result<(), VideoError> {
        match *self {
            RobustnessTransform::Identity => Ok(()),
            RobustnessTransform::Compression { crf } if crf <= MAX_CRF => Ok(()),
            RobustnessTransform::Compression { crf } => Err(VideoError::Invalid(format!(
                "rate factor {crf} outside 0..={MAX_CRF}"
            ))),
            RobustnessTransform::Rescale { scale } if scale > 0.0 && scale <= 1.0 => Ok(()),
            RobustnessTransform::Rescale { scale } => {
                Err(VideoError::Invalid(format!("scale {scale} outside (0, 1]")))
            }
        }
    }

    /// The four degraded test variants: `CF_23`, `CF_40`, `SR_0.5`, `SR_0.75`.
    pub fn standard_set() -> Vec<Self> {
        vec![
            RobustnessTransform::Compression { crf: 23 },
            RobustnessTransform::Compression { crf: 40 },
            RobustnessTransform::Rescale { scale: 0.5 },
            RobustnessTransform::Rescale { scale: 0.75 },
        ]
    }
}

impl fmt::Display for RobustnessTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RobustnessTransform::Identity => f.write_str("identity"),
            RobustnessTransform::Compression { crf } => write!(f, "CF_{crf}"),
            RobustnessTransform::Rescale { scale } => write!(f, "SR_{scale}"),
        }
    }
}

impl FromStr for RobustnessTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t = if s.eq_ignore_ascii_case("identity") {
            RobustnessTransform::Identity
        } else if let Some(crf) = s.strip_prefix("CF_") {
            RobustnessTransform::Compression {
                crf: crf.parse().map_err(|_| format!("bad rate factor in {s:?}"))?,
            }
        } else if let Some(scale) = s.strip_prefix("SR_") {
            RobustnessTransform::Rescale {
                scale: scale.parse().map_err(|_| format!("bad scale in {s:?}"))?,
            }
        } else {
            return Err(format!("unknown transform {s:?} (identity, CF_<crf>, SR_<scale>)"));
        };
        t.validate().map_err(|e| e.to_string())?;
        Ok(t)
    }
}

pub fn apply_robustness_transform(
    video: &FrameStream,
    t: &RobustnessTransform,
) -> Result<FrameStream, VideoError> {
    t.validate()?;
    match *t {
        RobustnessTransform::Identity => Ok(video.clone()),
        RobustnessTransform::Compression { crf } => {
            let bytes = avi::encode(video, Codec::Mjpeg { quality: crf_to_jpeg_quality(crf) })?;
            avi::decode(&bytes, &t.to_string())
        }
        RobustnessTransform::Rescale { scale } => {
            let (w, h) = video.dimensions();
            let nw = ((w as f64 * scale).round() as u32).max(1);
            let nh = ((h as f64 * scale).round() as u32).max(1);
            if (nw, nh) == (w, h) {
                return Ok(video.clone());
            }
            let frames = video
                .frames()
                .iter()
                .map(|f| imageops::resize(f, nw, nh, FilterType::Triangle))
                .collect();
            FrameStream::new(frames, video.fps())
        }
    }
}

/// Size in bytes of `video` encoded at the given rate factor.
pub fn compressed_size(video: &FrameStream, crf: u8) -> Result<usize, VideoError> {
    RobustnessTransform::Compression { crf }.validate()?;
    Ok(avi::encode(video, Codec::Mjpeg { quality: crf_to_jpeg_quality(crf) })?.len())
}
