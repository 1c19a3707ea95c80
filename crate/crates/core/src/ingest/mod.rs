//! Video and dataset input: the frame container, the manifest format, the
//! synthetic toy dataset and robustness transforms.

pub mod avi;
mod manifest;
mod robustness;
pub mod toy;

use std::path::Path;

use image::RgbImage;
use thiserror::Error;

pub use avi::Codec;
pub use manifest::{
    load_manifest, save_manifest, DatasetManifest, Label, ManifestEntry, ManifestError, Split,
};
pub use robustness::{apply_robustness_transform, compressed_size, crf_to_jpeg_quality, RobustnessTransform};
pub use toy::{
    synthesize_concat_video, synthesize_toy_dataset, ConcatVideo, ToySpec, ToyVideo,
};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("cannot decode {what}: {reason}")]
    DecodeFailure { what: String, reason: String },
    #[error("video {0} contains no frames")]
    EmptyVideo(String),
    #[error("invalid frame stream: {0}")]
    Invalid(String),
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("toy dataset spec too small: {0}")]
    SpecTooSmall(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Decoded RGB frames in presentation order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    frames: Vec<RgbImage>,
    fps: f64,
}

impl FrameStream {
    pub fn new(frames: Vec<RgbImage>, fps: f64) -> Result<Self, VideoError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(VideoError::Invalid(format!("fps must be positive, got {fps}")));
        }
        if frames.is_empty() {
            return Err(VideoError::Invalid("no frames".into()));
        }
        let dims = frames[0].dimensions();
        if let Some(i) = frames.iter().position(|f| f.dimensions() != dims) {
            return Err(VideoError::Invalid(format!(
                "frame {i} is {:?}, frame 0 is {dims:?}",
                frames[i].dimensions()
            )));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<RgbImage> {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// `(width, height)` shared by every frame.
    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    /// Frames `start..end` as a new stream with the same rate.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self, VideoError> {
        if start >= end || end > self.frames.len() {
            return Err(VideoError::Invalid(format!(
                "slice {start}..{end} out of 0..{}",
                self.frames.len()
            )));
        }
        Self::new(self.frames[start..end].to_vec(), self.fps)
    }
}

pub fn read_video(path: &Path) -> Result<FrameStream, VideoError> {
    let bytes = std::fs::read(path).map_err(|source| VideoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    avi::decode(&bytes, &path.display().to_string())
}

pub fn write_video(path: &Path, video: &FrameStream, codec: Codec) -> Result<(), VideoError> {
    let bytes = avi::encode(video, codec)?;
    std::fs::write(path, bytes).map_err(|source| VideoError::Io {
        path: path.display().to_string(),
        source,
    })
}
