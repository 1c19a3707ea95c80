//! Segment-wise localization: fixed-length segments are scored
//! independently and every frame takes its segment's fake probability.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FrameStream, Label};
use crate::landmarks::LandmarkFrame;
use crate::mstie::{Model, ModelError};
use crate::selector::{select_and_build, SelectorConfig};

pub use report::{emit_report, parse_report_text, render_timeline, report_text, ReportRow};

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("EmptyVideo: nothing to segment")]
    EmptyVideo,
    #[error("NoScorableSegment: all {0} segments failed frame selection")]
    NoScorableSegment(usize),
    #[error("LengthMismatch: {0} predicted frames against {1} truth frames")]
    LengthMismatch(usize, usize),
    #[error("WriteFailure: {path}: {reason}")]
    WriteFailure { path: String, reason: String },
    #[error("report line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    pub segment_seconds: f64,
    /// Frames at or above this fake probability are predicted fake.
    pub threshold: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            segment_seconds: 1.0,
            threshold: 0.5,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<(), LocalizeError> {
        if !(self.segment_seconds > 0.0) {
            return Err(LocalizeError::Config("segment_seconds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(LocalizeError::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Half-open frame ranges of length `round(fps · seconds)`. A trailing
/// remainder shorter than half a segment joins the previous segment.
pub fn segment_bounds(frames: usize, fps: f64, seconds: f64) -> Result<Vec<(usize, usize)>, LocalizeError> {
    if frames == 0 {
        return Err(LocalizeError::EmptyVideo);
    }
    let len = ((fps * seconds).round() as usize).max(1);
    let mut out: Vec<(usize, usize)> = (0..frames / len).map(|k| (k * len, (k + 1) * len)).collect();
    let rest = frames % len;
    if rest > 0 {
        match out.last_mut() {
            Some(last) if (rest as f64) < len as f64 / 2.0 => last.1 = frames,
            _ => out.push((frames - rest, frames)),
        }
    }
    Ok(out)
}

pub fn segment_video(video: &FrameStream, seconds: f64) -> Result<Vec<(usize, usize)>, LocalizeError> {
    segment_bounds(video.len(), video.fps(), seconds)
}

/// Scores one segment as a fake probability. `range` locates the segment in
/// the whole video; `video` and `landmarks` are already cut to it.
pub trait FakeScorer: Sync {
    fn score(
        &self,
        video: &FrameStream,
        landmarks: &[Option<LandmarkFrame>],
        range: (usize, usize),
    ) -> Result<f64, String>;
}

/// Full selection and model pipeline inside the segment.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub selector: SelectorConfig,
}

impl FakeScorer for ModelScorer<'_> {
    fn score(&self, video: &FrameStream, landmarks: &[Option<LandmarkFrame>], _: (usize, usize)) -> Result<f64, String> {
        let sel = select_and_build(video, landmarks, &self.selector).map_err(|e| e.to_string())?;
        let rgb = sel.rgb.tensor();
        let delta = sel.delta.tensor();
        let r = self.model.predict(rgb.view(), delta.view()).map_err(|e| e.to_string())?;
        Ok(1.0 - r.probability_real)
    }
}

/// Answers from a known per-frame mask: 1 when most frames of the segment
/// are fake, else 0.
pub struct OracleScorer {
    pub truth: Vec<bool>,
}

impl FakeScorer for OracleScorer {
    fn score(&self, _: &FrameStream, _: &[Option<LandmarkFrame>], (s, e): (usize, usize)) -> Result<f64, String> {
        let fake = self.truth[s..e].iter().filter(|&&f| f).count();
        Ok(if 2 * fake > e - s { 1.0 } else { 0.0 })
    }
}

/// The same probability for every segment.
pub struct ConstantScorer(pub f64);

impl FakeScorer for ConstantScorer {
    fn score(&self, _: &FrameStream, _: &[Option<LandmarkFrame>], _: (usize, usize)) -> Result<f64, String> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub probability_fake: f64,
    /// Probability copied from the nearest scored segment.
    pub inherited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub source: String,
    pub fps: f64,
    pub threshold: f64,
    pub segments: Vec<Segment>,
    pub per_frame_prob: Vec<f64>,
    /// `true` marks a frame predicted fake.
    pub predicted_mask: Vec<bool>,
    pub truth_mask: Option<Vec<bool>>,
    pub iou: Option<f64>,
}

impl SegmentReport {
    /// Per-frame inheritance flag.
    pub fn frame_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.per_frame_prob.len()];
        for s in &self.segments {
            flags[s.start..s.end].fill(s.inherited);
        }
        flags
    }
}

/// `|pred ∧ truth| / |pred ∨ truth|` over fake frames; 1 when neither mask
/// marks any frame.
pub fn iou(pred: &[bool], truth: &[bool]) -> Result<f64, LocalizeError> {
    if pred.len() != truth.len() {
        return Err(LocalizeError::LengthMismatch(pred.len(), truth.len()));
    }
    let inter = pred.iter().zip(truth).filter(|(&p, &t)| p && t).count();
    let union = pred.iter().zip(truth).filter(|(&p, &t)| p || t).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Per-frame fake mask from manifest labels.
pub fn fake_mask(labels: &[Label]) -> Vec<bool> {
    labels.iter().map(|l| l.is_fake()).collect()
}

/// Scores every segment (in parallel), fills unscorable segments from the
/// nearest scored one (the earlier on ties) and expands to frames.
pub fn localize(
    source: &str,
    video: &FrameStream,
    landmarks: &[Option<LandmarkFrame>],
    scorer: &dyn FakeScorer,
    truth: Option<&[bool]>,
    cfg: &LocalizeConfig,
) -> Result<SegmentReport, LocalizeError> {
    cfg.validate()?;
    if landmarks.len() != video.len() {
        return Err(LocalizeError::LengthMismatch(landmarks.len(), video.len()));
    }
    if let Some(t) = truth {
        if t.len() != video.len() {
            return Err(LocalizeError::LengthMismatch(video.len(), t.len()));
        }
    }
    let bounds = segment_video(video, cfg.segment_seconds)?;
    let scores: Vec<Option<f64>> = bounds
        .par_iter()
        .map(|&(s, e)| {
            let part = video.slice(s, e).map_err(|e| e.to_string())?;
            scorer.score(&part, &landmarks[s..e], (s, e))
        })
        .map(|r| match r {
            Ok(p) if p.is_finite() => Some(p.clamp(0.0, 1.0)),
            Ok(_) => None,
            Err(reason) => {
                log::debug!("segment unscorable: {reason}");
                None
            }
        })
        .collect();
    let scored: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_some()).collect();
    if scored.is_empty() {
        return Err(LocalizeError::NoScorableSegment(bounds.len()));
    }
    let segments: Vec<Segment> = bounds
        .iter()
        .enumerate()
        .map(|(i, &(start, end))| match scores[i] {
            Some(p) => Segment {
                start,
                end,
                probability_fake: p,
                inherited: false,
            },
            None => {
                let nearest = *scored.iter().min_by_key(|&&j| (i.abs_diff(j), j)).unwrap();
                Segment {
                    start,
                    end,
                    probability_fake: scores[nearest].unwrap(),
                    inherited: true,
                }
            }
        })
        .collect();
    let mut per_frame_prob = vec![0.0; video.len()];
    for s in &segments {
        per_frame_prob[s.start..s.end].fill(s.probability_fake);
    }
    let predicted_mask: Vec<bool> = per_frame_prob.iter().map(|&p| p >= cfg.threshold).collect();
    let iou = truth.map(|t| iou(&predicted_mask, t)).transpose()?;
    Ok(SegmentReport {
        source: source.to_string(),
        fps: video.fps(),
        threshold: cfg.threshold,
        segments,
        per_frame_prob,
        predicted_mask,
        truth_mask: truth.map(|t| t.to_vec()),
        iou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;
    use proptest::prelude::*;

    fn blank(n: usize) -> FrameStream {
        FrameStream::new(vec![RgbImage::new(8, 8); n], 25.0).unwrap()
    }

    fn lengths(b: &[(usize, usize)]) -> Vec<usize> {
        b.iter().map(|(s, e)| e - s).collect()
    }

    #[test]
    fn remainder_rule() {
        assert_eq!(lengths(&segment_bounds(75, 25.0, 1.0).unwrap()), [25, 25, 25]);
        assert_eq!(lengths(&segment_bounds(80, 25.0, 1.0).unwrap()), [25, 25, 30]);
        assert_eq!(lengths(&segment_bounds(90, 25.0, 1.0).unwrap()), [25, 25, 25, 15]);
        assert_eq!(lengths(&segment_bounds(10, 25.0, 1.0).unwrap()), [10]);
        assert!(matches!(segment_bounds(0, 25.0, 1.0), Err(LocalizeError::EmptyVideo)));
    }

    #[test]
    fn iou_examples() {
        let mask = |a: usize, b: usize| (0..50).map(|i| (a..b).contains(&i)).collect::<Vec<_>>();
        assert_eq!(iou(&mask(10, 30), &mask(10, 30)).unwrap(), 1.0);
        assert_eq!(iou(&mask(0, 10), &mask(20, 30)).unwrap(), 0.0);
        assert!((iou(&mask(10, 30), &mask(20, 40)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&mask(0, 0), &mask(0, 0)).unwrap(), 1.0);
        assert!(matches!(iou(&[true], &[true, false]), Err(LocalizeError::LengthMismatch(1, 2))));
    }

    #[test]
    fn constant_scorer_gives_constant_frames() {
        let v = blank(80);
        let lm = vec![None; 80];
        let r = localize("v", &v, &lm, &ConstantScorer(0.3), None, &LocalizeConfig::default()).unwrap();
        assert!(r.per_frame_prob.iter().all(|&p| p == 0.3));
        assert!(r.predicted_mask.iter().all(|&m| !m));
        assert_eq!(r.iou, None);
    }

    struct FailsOn(Vec<usize>);

    impl FakeScorer for FailsOn {
        fn score(&self, _: &FrameStream, _: &[Option<LandmarkFrame>], (s, _): (usize, usize)) -> Result<f64, String> {
            if self.0.contains(&(s / 25)) {
                Err("no open mouth".into())
            } else {
                Ok(s as f64 / 100.0)
            }
        }
    }

    #[test]
    fn unscorable_segments_inherit_nearest_and_are_flagged() {
        let v = blank(125);
        let lm = vec![None; 125];
        let r = localize("v", &v, &lm, &FailsOn(vec![0, 2, 4]), None, &LocalizeConfig::default()).unwrap();
        let probs: Vec<f64> = r.segments.iter().map(|s| s.probability_fake).collect();
        assert_eq!(probs, [0.25, 0.25, 0.25, 0.75, 0.75]);
        let flags: Vec<bool> = r.segments.iter().map(|s| s.inherited).collect();
        assert_eq!(flags, [true, false, true, false, true]);
        assert!(r.frame_flags()[..25].iter().all(|&f| f));

        let err = localize("v", &v, &lm, &FailsOn((0..5).collect()), None, &LocalizeConfig::default());
        assert!(matches!(err, Err(LocalizeError::NoScorableSegment(5))));
    }

    #[test]
    fn oracle_scorer_recovers_truth() {
        let v = blank(100);
        let lm = vec![None; 100];
        let truth: Vec<bool> = (0..100).map(|i| (25..75).contains(&i)).collect();
        let oracle = OracleScorer { truth: truth.clone() };
        let r = localize("v", &v, &lm, &oracle, Some(&truth), &LocalizeConfig::default()).unwrap();
        assert_eq!(r.predicted_mask, truth);
        assert_eq!(r.iou, Some(1.0));
    }

    proptest! {
        #[test]
        fn segments_partition_the_video(n in 1usize..400, fps in prop::sample::select(vec![10.0, 24.0, 25.0, 29.97, 30.0])) {
            let b = segment_bounds(n, fps, 1.0).unwrap();
            prop_assert_eq!(b[0].0, 0);
            prop_assert_eq!(b.last().unwrap().1, n);
            for w in b.windows(2) {
                prop_assert_eq!(w[0].1, w[1].0);
            }
            prop_assert!(b.iter().all(|(s, e)| e > s));
        }

        #[test]
        fn iou_is_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 1..60), seed in any::<u64>()) {
            let b: Vec<bool> = a.iter().enumerate().map(|(i, &x)| x ^ ((seed >> (i % 64)) & 1 == 1)).collect();
            let x = iou(&a, &b).unwrap();
            prop_assert_eq!(x, iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
            if a.iter().any(|&v| v) {
                prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
            }
        }
    }
}
