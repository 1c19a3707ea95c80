//! Landmark cache files: one line per frame with a detected face,
//! `frame_index` followed by 68 whitespace-separated `x,y` pairs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::RgbImage;

use super::{LandmarkError, LandmarkFrame, LandmarkProvider, Point, NUM_LANDMARKS};

pub fn write_landmark_cache(path: &Path, frames: &[LandmarkFrame]) -> Result<(), LandmarkError> {
    let mut out = String::new();
    for lm in frames {
        write!(out, "{}", lm.frame_index).unwrap();
        for p in lm.points() {
            write!(out, " {p}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| LandmarkError::Io(format!("{}: {e}", path.display())))
}

pub fn read_landmark_cache(path: &Path) -> Result<Vec<LandmarkFrame>, LandmarkError> {
    let text =
        fs::read_to_string(path).map_err(|e| LandmarkError::Io(format!("{}: {e}", path.display())))?;
    let malformed = |line: usize, reason: String| LandmarkError::MalformedCache {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let index: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| malformed(line_no, "bad frame index".into()))?;
        let mut points = Vec::with_capacity(NUM_LANDMARKS);
        for field in fields {
            let (x, y) = field
                .split_once(',')
                .ok_or_else(|| malformed(line_no, format!("expected x,y, got {field:?}")))?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| malformed(line_no, format!("bad coordinate {s:?}")))
            };
            points.push(Point::new(parse(x)?, parse(y)?));
        }
        if points.len() != NUM_LANDMARKS {
            return Err(malformed(line_no, format!("{} points, expected 68", points.len())));
        }
        frames.push(LandmarkFrame::new(points, 1.0, index)?);
    }
    Ok(frames)
}

/// Provider backed by precomputed landmarks, typically produced by an
/// external face-landmark detector and stored as a cache file.
#[derive(Debug, Clone, Default)]
pub struct CachedProvider {
    frames: HashMap<usize, LandmarkFrame>,
}

impl CachedProvider {
    pub fn new(frames: Vec<LandmarkFrame>) -> Self {
        Self {
            frames: frames.into_iter().map(|f| (f.frame_index, f)).collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LandmarkError> {
        Ok(Self::new(read_landmark_cache(path)?))
    }
}

impl LandmarkProvider for CachedProvider {
    fn detect(&mut self, _frame: &RgbImage, frame_index: usize) -> Option<LandmarkFrame> {
        self.frames.get(&frame_index).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.lm");
        let frames: Vec<_> = (0..3)
            .map(|f| {
                let pts = (0..NUM_LANDMARKS)
                    .map(|k| Point::new(k as f64 * 0.1 + f as f64 / 3.0, 1.0 / (k as f64 + 7.0)))
                    .collect();
                LandmarkFrame::new(pts, 1.0, f * 2).unwrap()
            })
            .collect();
        write_landmark_cache(&path, &frames).unwrap();
        assert_eq!(read_landmark_cache(&path).unwrap(), frames);

        let mut provider = CachedProvider::from_file(&path).unwrap();
        let blank = RgbImage::new(1, 1);
        assert_eq!(provider.detect(&blank, 2), Some(frames[1].clone()));
        assert_eq!(provider.detect(&blank, 1), None);
    }

    #[test]
    fn short_line_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lm");
        fs::write(&path, "0 1,2 3,4\n").unwrap();
        assert!(matches!(
            read_landmark_cache(&path),
            Err(LandmarkError::MalformedCache { line: 1, .. })
        ));
    }
}
