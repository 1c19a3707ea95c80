//! Video to model-input preparation.

use std::path::{Path, PathBuf};

use ndarray::Array4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{apply_robustness_transform, read_video, DatasetManifest, FrameStream, Label, RobustnessTransform};
use crate::landmarks::{read_landmark_cache, LandmarkFrame, LandmarkProvider, Point, ToyProvider};
use crate::selector::{detect_all, select_and_build, SelectorConfig};

/// Selected and cropped inputs of one video, stored compactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub path: PathBuf,
    pub label: Label,
    pub indices: Vec<usize>,
    pub rgb: Array4<u8>,
    pub delta: Array4<i16>,
}

impl Clip {
    pub fn rgb_tensor(&self) -> Array4<f64> {
        self.rgb.mapv(|v| v as f64 / 255.0)
    }

    pub fn delta_tensor(&self) -> Array4<f64> {
        self.delta.mapv(|v| v as f64 / 255.0)
    }
}

/// A video left out of training or scoring, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

/// Where landmarks come from: a cache directory of `<stem>.landmarks` files
/// when present, otherwise the toy detector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkSource {
    pub cache_dir: Option<PathBuf>,
}

impl LandmarkSource {
    pub fn new(cache_dir: Option<PathBuf>) -> Self {
        Self { cache_dir }
    }

    pub fn cache_path(dir: &Path, video: &Path) -> PathBuf {
        let stem = video.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        dir.join(format!("{stem}.landmarks"))
    }

    /// Cached landmarks for `video_path` scaled by `scale`, if a cache file
    /// exists.
    pub fn cached(&self, video_path: &Path, scale: f64) -> Result<Option<Vec<LandmarkFrame>>, String> {
        let Some(dir) = &self.cache_dir else { return Ok(None) };
        let path = Self::cache_path(dir, video_path);
        if !path.exists() {
            return Ok(None);
        }
        let frames = read_landmark_cache(&path).map_err(|e| e.to_string())?;
        if scale == 1.0 {
            return Ok(Some(frames));
        }
        frames
            .into_iter()
            .map(|f| {
                let pts = f.points().iter().map(|p| Point::new(p.x * scale, p.y * scale)).collect();
                LandmarkFrame::new(pts, f.confidence, f.frame_index)
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|e| e.to_string())
    }

    /// Per-frame landmarks for `video`.
    pub fn landmarks(&self, video_path: &Path, video: &FrameStream, scale: f64) -> Result<Vec<Option<LandmarkFrame>>, String> {
        match self.cached(video_path, scale)? {
            Some(frames) => {
                let mut out = vec![None; video.len()];
                for f in frames {
                    if f.frame_index < out.len() {
                        let i = f.frame_index;
                        out[i] = Some(f);
                    }
                }
                Ok(out)
            }
            None => Ok(detect_all(video, &mut ToyProvider::new() as &mut dyn LandmarkProvider)),
        }
    }
}

fn transform_scale(t: &RobustnessTransform) -> f64 {
    match *t {
        RobustnessTransform::Rescale { scale } => scale,
        _ => 1.0,
    }
}

/// Selection on an in-memory video.
pub fn clip_from_video(
    path: &Path,
    label: Label,
    video: &FrameStream,
    landmarks: &[Option<LandmarkFrame>],
    cfg: &SelectorConfig,
) -> Result<Clip, String> {
    let sel = select_and_build(video, landmarks, cfg).map_err(|e| e.to_string())?;
    Ok(Clip {
        path: path.to_path_buf(),
        label,
        indices: sel.indices(),
        rgb: sel.rgb.pixels(),
        delta: sel.delta.frames,
    })
}

/// Reads, transforms, landmarks and selects one video.
pub fn prepare_clip(
    path: &Path,
    label: Label,
    cfg: &SelectorConfig,
    transform: &RobustnessTransform,
    source: &LandmarkSource,
) -> Result<Clip, String> {
    let video = read_video(path).map_err(|e| e.to_string())?;
    let video = apply_robustness_transform(&video, transform).map_err(|e| e.to_string())?;
    let landmarks = source.landmarks(path, &video, transform_scale(transform))?;
    clip_from_video(path, label, &video, &landmarks, cfg)
}

/// Prepares every manifest entry in parallel. Results keep manifest order.
pub fn prepare_manifest(
    manifest: &DatasetManifest,
    cfg: &SelectorConfig,
    transform: &RobustnessTransform,
    source: &LandmarkSource,
) -> (Vec<Clip>, Vec<Skipped>) {
    let results: Vec<Result<Clip, Skipped>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            prepare_clip(&e.path, e.label, cfg, transform, source).map_err(|reason| Skipped {
                path: e.path.display().to_string(),
                reason,
            })
        })
        .collect();
    let mut clips = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(c) => clips.push(c),
            Err(s) => {
                log::warn!("skipping {}: {}", s.path, s.reason);
                skipped.push(s);
            }
        }
    }
    (clips, skipped)
}
