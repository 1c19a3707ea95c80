//! Local and global mouth frame selection and the RGB / delta sequences
//! built from the chosen frames.
//!
//! The local block is the run of `L` consecutive frames with the widest mean
//! mouth opening. Global frames are `G` further frames whose opening and
//! mouth aspect match the local block, spaced at least `min_gap` seconds from
//! every local frame and from each other. The RGB sequence is the local block
//! followed by the global frames in ascending order; the delta sequence holds
//! differences of consecutive RGB frames.

mod debug;

use std::cmp::Ordering;

use image::RgbImage;
use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FrameStream;
use crate::landmarks::{crop_mouth, openness, CropConfig, LandmarkError, LandmarkFrame, LandmarkProvider, MouthImage};

pub use debug::dump_selection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("no window of {0} frames has a mean openness at or above the threshold")]
    NoOpenMouth(usize),
    #[error("not enough usable frames: {0}")]
    InsufficientFrames(String),
    #[error("mouth crop failed on frame {frame}: {source}")]
    CropFailure {
        frame: usize,
        #[source]
        source: LandmarkError,
    },
    #[error("invalid selector config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    /// Number of consecutive local frames (`L`).
    #[serde(alias = "L")]
    pub local_frames: usize,
    /// Number of global frames (`G`).
    #[serde(alias = "G")]
    pub global_frames: usize,
    /// Minimum spacing of global frames, seconds.
    pub min_gap: f64,
    pub open_threshold: f64,
    /// Relative tolerance for matching a global frame to the local block.
    pub match_tolerance: f64,
    pub crop: CropConfig,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            local_frames: 5,
            global_frames: 3,
            min_gap: 0.09,
            open_threshold: 0.05,
            match_tolerance: 0.10,
            crop: CropConfig::default(),
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::Config(m.to_string()));
        if self.local_frames < 2 {
            return bad("local_frames must be at least 2");
        }
        if self.global_frames < 1 {
            return bad("global_frames must be at least 1");
        }
        if !(self.min_gap > 0.0) {
            return bad("min_gap must be positive");
        }
        if !(self.match_tolerance >= 0.0) {
            return bad("match_tolerance must be non-negative");
        }
        if self.crop.height == 0 || self.crop.width == 0 || !(self.crop.margin >= 0.0) {
            return bad("crop size must be positive and margin non-negative");
        }
        Ok(())
    }

    pub fn sequence_len(&self) -> usize {
        self.local_frames + self.global_frames
    }

    /// Minimum index separation for global frames at `fps`.
    pub fn gap_frames(&self, fps: f64) -> usize {
        ((self.min_gap * fps - 1e-9).ceil() as usize).max(1)
    }

    /// Fewest frames a video can have and still admit a selection.
    pub fn min_video_frames(&self, fps: f64) -> usize {
        self.local_frames + self.global_frames * self.gap_frames(fps)
    }
}

/// Openness ratio and mouth aspect of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    pub ratio: f64,
    pub aspect: f64,
}

impl FrameFeature {
    pub fn from_landmarks(lm: &LandmarkFrame) -> Option<Self> {
        let o = openness(lm).ok()?;
        Some(Self {
            ratio: o.ratio,
            aspect: lm.mouth_aspect(),
        })
    }
}

fn window_mean(series: &[Option<FrameFeature>], start: usize, len: usize, f: impl Fn(&FrameFeature) -> f64) -> Option<f64> {
    let mut sum = 0.0;
    for s in &series[start..start + len] {
        sum += f(s.as_ref()?);
    }
    Some(sum / len as f64)
}

/// The `L` consecutive frames with the largest mean openness ratio among
/// windows whose mean reaches `open_threshold`; ties go to the earliest
/// window. Frames without landmarks cannot be part of the window.
pub fn select_local_window(
    series: &[Option<FrameFeature>],
    cfg: &SelectorConfig,
) -> Result<Vec<usize>, SelectionError> {
    let l = cfg.local_frames;
    if series.iter().flatten().count() < l {
        return Err(SelectionError::InsufficientFrames(format!(
            "{} frames with landmarks, local window needs {l}",
            series.iter().flatten().count()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for start in 0..=series.len() - l {
        let Some(mean) = window_mean(series, start, l, |f| f.ratio) else {
            continue;
        };
        if mean >= cfg.open_threshold && best.is_none_or(|(_, m)| mean > m) {
            best = Some((start, mean));
        }
    }
    best.map(|(s, _)| (s..s + l).collect())
        .ok_or(SelectionError::NoOpenMouth(l))
}

/// Ranking key of a global candidate: strict matches first, then closeness
/// of ratio to the local mean, then index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateKey {
    pub relaxed: bool,
    pub distance: f64,
    pub index: usize,
}

impl CandidateKey {
    pub fn cmp(&self, other: &Self) -> Ordering {
        self.relaxed
            .cmp(&other.relaxed)
            .then(self.distance.total_cmp(&other.distance))
            .then(self.index.cmp(&other.index))
    }
}

/// Gap-feasible global candidates with their ranking keys, in index order.
pub fn global_candidates(
    series: &[Option<FrameFeature>],
    local: &[usize],
    cfg: &SelectorConfig,
    gap: usize,
) -> Vec<CandidateKey> {
    let mean_ratio = local.iter().map(|&i| series[i].unwrap().ratio).sum::<f64>() / local.len() as f64;
    let mean_aspect = local.iter().map(|&i| series[i].unwrap().aspect).sum::<f64>() / local.len() as f64;
    let tol = cfg.match_tolerance;
    series
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let f = f.as_ref()?;
            if local.iter().any(|&l| i.abs_diff(l) < gap) {
                return None;
            }
            let distance = (f.ratio - mean_ratio).abs();
            let strict = distance <= tol * mean_ratio && (f.aspect - mean_aspect).abs() <= tol * mean_aspect;
            Some(CandidateKey {
                relaxed: !strict,
                distance,
                index: i,
            })
        })
        .collect()
}

/// Chooses `G` global frames: the feasible set (pairwise at least `gap`
/// apart) whose keys, read in ranking order, are lexicographically
/// smallest. Strict matches are preferred; remaining slots are filled with
/// the nearest-ratio candidates.
pub fn select_global_frames(
    series: &[Option<FrameFeature>],
    local: &[usize],
    cfg: &SelectorConfig,
    fps: f64,
) -> Result<Vec<usize>, SelectionError> {
    let gap = cfg.gap_frames(fps);
    let mut cands = global_candidates(series, local, cfg, gap);
    cands.sort_by(CandidateKey::cmp);
    let g = cfg.global_frames;
    let mut chosen = Vec::with_capacity(g);
    if !search(&cands, 0, g, gap, &mut chosen) {
        return Err(SelectionError::InsufficientFrames(format!(
            "{} candidates at least {gap} frames from the local block, cannot place {g} globals {gap} apart",
            cands.len()
        )));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

fn search(cands: &[CandidateKey], from: usize, need: usize, gap: usize, chosen: &mut Vec<usize>) -> bool {
    if need == 0 {
        return true;
    }
    for k in from..cands.len() {
        if cands.len() - k < need {
            return false;
        }
        let idx = cands[k].index;
        if chosen.iter().all(|&c| c.abs_diff(idx) >= gap) {
            chosen.push(idx);
            if search(cands, k + 1, need - 1, gap, chosen) {
                return true;
            }
            chosen.pop();
        }
    }
    false
}

/// RGB mouth crops in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct MouthSequence {
    pub frames: Vec<MouthImage>,
    pub source_indices: Vec<usize>,
    pub timestamps: Vec<f64>,
}

impl MouthSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Raw pixels as `(N, H, W, 3)`.
    pub fn pixels(&self) -> Array4<u8> {
        stack_images(self.frames.iter().map(|m| &m.pixels))
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn tensor(&self) -> Array4<f64> {
        self.pixels().mapv(|v| v as f64 / 255.0)
    }
}

/// Signed differences of consecutive RGB crops, `(N-1, H, W, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSequence {
    pub frames: Array4<i16>,
}

impl DeltaSequence {
    pub fn from_rgb(rgb: &Array4<u8>) -> Self {
        let n = rgb.len_of(Axis(0));
        let (h, w) = (rgb.len_of(Axis(1)), rgb.len_of(Axis(2)));
        let mut frames = Array4::<i16>::zeros((n.saturating_sub(1), h, w, 3));
        for t in 0..n.saturating_sub(1) {
            let a = rgb.index_axis(Axis(0), t);
            let b = rgb.index_axis(Axis(0), t + 1);
            let mut d = frames.index_axis_mut(Axis(0), t);
            ndarray::Zip::from(&mut d)
                .and(&a)
                .and(&b)
                .for_each(|d, &a, &b| *d = b as i16 - a as i16);
        }
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differences scaled to `[-1, 1]`.
    pub fn tensor(&self) -> Array4<f64> {
        self.frames.mapv(|v| v as f64 / 255.0)
    }
}

fn stack_images<'a>(images: impl Iterator<Item = &'a RgbImage>) -> Array4<u8> {
    let images: Vec<&RgbImage> = images.collect();
    let (w, h) = images.first().map_or((0, 0), |i| i.dimensions());
    let mut out = Array4::<u8>::zeros((images.len(), h as usize, w as usize, 3));
    for (n, img) in images.iter().enumerate() {
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out[[n, y as usize, x as usize, c]] = p[c];
            }
        }
    }
    out
}

/// Crops the frames at `indices` (already in sequence order) and builds both
/// sequences.
pub fn build_sequences(
    video: &FrameStream,
    landmarks: &[Option<LandmarkFrame>],
    indices: &[usize],
    crop: &CropConfig,
) -> Result<(MouthSequence, DeltaSequence), SelectionError> {
    let mut frames = Vec::with_capacity(indices.len());
    for &i in indices {
        let lm = landmarks
            .get(i)
            .and_then(|l| l.as_ref())
            .ok_or(SelectionError::CropFailure {
                frame: i,
                source: LandmarkError::DegenerateBox { frame: i },
            })?;
        let frame = video.frames().get(i).ok_or_else(|| {
            SelectionError::InsufficientFrames(format!("frame {i} outside video of {}", video.len()))
        })?;
        frames.push(crop_mouth(frame, lm, crop).map_err(|source| SelectionError::CropFailure { frame: i, source })?);
    }
    let rgb = MouthSequence {
        frames,
        source_indices: indices.to_vec(),
        timestamps: indices.iter().map(|&i| i as f64 / video.fps()).collect(),
    };
    let delta = DeltaSequence::from_rgb(&rgb.pixels());
    Ok((rgb, delta))
}

/// A complete selection for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub local: Vec<usize>,
    pub global: Vec<usize>,
    pub rgb: MouthSequence,
    pub delta: DeltaSequence,
}

impl Selection {
    pub fn indices(&self) -> Vec<usize> {
        self.local.iter().chain(&self.global).copied().collect()
    }
}

/// Runs the provider over every frame.
pub fn detect_all(video: &FrameStream, provider: &mut dyn LandmarkProvider) -> Vec<Option<LandmarkFrame>> {
    video
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| provider.detect(f, i))
        .collect()
}

/// Selects local and global frames and builds the sequences. A frame whose
/// crop fails is dropped from consideration and selection is repeated.
pub fn select_and_build(
    video: &FrameStream,
    landmarks: &[Option<LandmarkFrame>],
    cfg: &SelectorConfig,
) -> Result<Selection, SelectionError> {
    cfg.validate()?;
    let mut series: Vec<Option<FrameFeature>> = landmarks
        .iter()
        .map(|l| l.as_ref().and_then(FrameFeature::from_landmarks))
        .collect();
    loop {
        let local = select_local_window(&series, cfg)?;
        let global = select_global_frames(&series, &local, cfg, video.fps())?;
        let indices: Vec<usize> = local.iter().chain(&global).copied().collect();
        match build_sequences(video, landmarks, &indices, &cfg.crop) {
            Ok((rgb, delta)) => {
                return Ok(Selection {
                    local,
                    global,
                    rgb,
                    delta,
                })
            }
            Err(SelectionError::CropFailure { frame, source }) => {
                log::debug!("crop failed on frame {frame} ({source}); retrying without it");
                series[frame] = None;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feats(ratios: &[f64]) -> Vec<Option<FrameFeature>> {
        ratios
            .iter()
            .map(|&r| Some(FrameFeature { ratio: r, aspect: 0.5 }))
            .collect()
    }

    #[test]
    fn local_window_example() {
        let cfg = SelectorConfig { local_frames: 3, ..SelectorConfig::default() };
        let s = feats(&[0.0, 0.0, 0.3, 0.4, 0.3, 0.0, 0.0]);
        assert_eq!(select_local_window(&s, &cfg).unwrap(), vec![2, 3, 4]);
    }

    #[test]
    fn all_closed_is_no_open_mouth() {
        let cfg = SelectorConfig::default();
        assert_eq!(select_local_window(&feats(&[0.0; 20]), &cfg), Err(SelectionError::NoOpenMouth(5)));
    }

    #[test]
    fn equal_windows_take_earliest() {
        let cfg = SelectorConfig { local_frames: 2, ..SelectorConfig::default() };
        let s = feats(&[0.5, 0.5, 0.0, 0.5, 0.5]);
        assert_eq!(select_local_window(&s, &cfg).unwrap(), vec![0, 1]);
    }

    #[test]
    fn gap_at_25_fps_is_three_frames() {
        assert_eq!(SelectorConfig::default().gap_frames(25.0), 3);
        assert_eq!(SelectorConfig::default().gap_frames(30.0), 3);
        assert_eq!(SelectorConfig { min_gap: 0.08, ..SelectorConfig::default() }.gap_frames(25.0), 2);
    }

    #[test]
    fn global_example_picks_closest_ratios() {
        // local block 0..5 with mean 0.30; candidates spaced 3 apart
        let mut ratios = vec![0.30; 5];
        ratios.extend([0.0, 0.0]);
        for r in [0.29, 0.31, 0.10, 0.30] {
            ratios.extend([r, 0.0, 0.0]);
        }
        let s: Vec<Option<FrameFeature>> = ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| (i < 5 || r > 0.0).then_some(FrameFeature { ratio: r, aspect: 0.5 }))
            .collect();
        let local = vec![0, 1, 2, 3, 4];
        let cfg = SelectorConfig::default();
        let g = select_global_frames(&s, &local, &cfg, 25.0).unwrap();
        let picked: Vec<f64> = g.iter().map(|&i| s[i].unwrap().ratio).collect();
        assert_eq!(g, vec![7, 10, 16]);
        assert_eq!(picked, vec![0.29, 0.31, 0.30]);
    }

    #[test]
    fn only_local_frames_is_insufficient() {
        let cfg = SelectorConfig::default();
        let s = feats(&[0.3; 5]);
        let local = select_local_window(&s, &cfg).unwrap();
        assert!(matches!(
            select_global_frames(&s, &local, &cfg, 25.0),
            Err(SelectionError::InsufficientFrames(_))
        ));
    }

    #[test]
    fn relaxed_fill_when_few_strict_matches() {
        let cfg = SelectorConfig { global_frames: 2, ..SelectorConfig::default() };
        let mut r = vec![0.3; 5];
        r.extend([0.0, 0.0, 0.9, 0.0, 0.0, 0.6, 0.0, 0.0, 0.3]);
        let s: Vec<_> = feats(&r).into_iter().map(|f| f.filter(|f| f.ratio > 0.0)).collect();
        let g = select_global_frames(&s, &[0, 1, 2, 3, 4], &cfg, 25.0).unwrap();
        assert_eq!(g, vec![10, 13]);
    }

    #[test]
    fn delta_of_identical_frames_is_zero() {
        let rgb = Array4::<u8>::from_elem((4, 2, 3, 3), 77);
        let d = DeltaSequence::from_rgb(&rgb);
        assert_eq!(d.len(), 3);
        assert!(d.frames.iter().all(|&v| v == 0));
    }

    proptest! {
        #[test]
        fn delta_inverts_exactly(data in prop::collection::vec(any::<u8>(), 5 * 2 * 3 * 3)) {
            let rgb = Array4::from_shape_vec((5, 2, 3, 3), data).unwrap();
            let d = DeltaSequence::from_rgb(&rgb);
            for t in 0..4 {
                for ((idx, &dv), &a) in d.frames.index_axis(Axis(0), t).indexed_iter().zip(rgb.index_axis(Axis(0), t).iter()) {
                    let (y, x, c) = idx;
                    prop_assert_eq!(a as i16 + dv, rgb[[t + 1, y, x, c]] as i16);
                }
            }
        }

        #[test]
        fn selection_is_deterministic_and_gapped(ratios in prop::collection::vec(0.0f64..1.0, 20..60)) {
            let cfg = SelectorConfig::default();
            let s = feats(&ratios);
            let local = select_local_window(&s, &cfg).unwrap();
            if let Ok(g) = select_global_frames(&s, &local, &cfg, 25.0) {
                prop_assert_eq!(&g, &select_global_frames(&s, &local, &cfg, 25.0).unwrap());
                for (a, &i) in g.iter().enumerate() {
                    prop_assert!(local.iter().all(|&l| l.abs_diff(i) >= 3));
                    prop_assert!(g[a + 1..].iter().all(|&j| j.abs_diff(i) >= 3));
                }
            }
        }
    }
}
