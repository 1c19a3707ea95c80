//! Procedural "talking mouth" videos for desk-scale experiments.
//!
//! Each video shows a flat face with an elliptical mouth whose opening
//! follows a smooth speech-like trajectory. In real videos the lip texture is
//! fixed in mouth coordinates, so appearance is coherent over time. In fake
//! videos every frame re-samples the mouth axes, lip tint and texture, with
//! magnitude set by the inconsistency strength; at strength zero both
//! classes come from the same distribution.

use std::f64::consts::TAU;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::avi::Codec;
use super::manifest::{save_manifest, DatasetManifest, Label, ManifestEntry, Split};
use super::{write_video, FrameStream, VideoError};
use crate::landmarks::{landmarks_from_boxes, LandmarkFrame, PixelBox, ToyColors};
use crate::selector::SelectorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub count: usize,
    pub fps: f64,
    /// Seconds per video.
    pub duration: f64,
    /// Per-frame perturbation magnitude of fake mouths, in `[0, 1]`.
    pub inconsistency_strength: f64,
    pub seed: u64,
    pub split: Option<Split>,
    pub width: u32,
    pub height: u32,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            count: 40,
            fps: 25.0,
            duration: 3.0,
            inconsistency_strength: 0.5,
            seed: 0,
            split: Some(Split::Train),
            width: 160,
            height: 120,
        }
    }
}

impl ToySpec {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<(), VideoError> {
        let too_small = |m: String| Err(VideoError::SpecTooSmall(m));
        if self.count < 2 {
            return too_small(format!("count {} < 2", self.count));
        }
        if !(self.fps > 0.0) {
            return too_small(format!("fps {}", self.fps));
        }
        let needed = SelectorConfig::default().min_video_frames(self.fps);
        if self.duration < 1.0 || self.frame_count() < needed {
            return too_small(format!(
                "{} s at {} fps gives {} frames; need at least 1 s and {needed} frames",
                self.duration,
                self.fps,
                self.frame_count()
            ));
        }
        if !(0.0..=1.0).contains(&self.inconsistency_strength) {
            return too_small(format!("strength {} outside [0, 1]", self.inconsistency_strength));
        }
        if self.width < 64 || self.height < 48 {
            return too_small(format!("frame size {}x{}", self.width, self.height));
        }
        Ok(())
    }
}

/// A rendered toy video with the landmarks the renderer placed.
#[derive(Debug, Clone)]
pub struct ToyVideo {
    pub stream: FrameStream,
    pub landmarks: Vec<LandmarkFrame>,
    pub label: Label,
    pub mask: Vec<Label>,
}

pub type ConcatVideo = ToyVideo;

pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
struct Texture {
    waves: [(f64, f64, f64, f64); 3],
    norm: f64,
}

impl Texture {
    fn sample(rng: &mut impl Rng) -> Self {
        let waves = std::array::from_fn(|_| {
            (
                rng.random_range(0.5..1.0),
                rng.random_range(1.5..4.0),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            )
        });
        let norm = waves.iter().map(|w| w.0).sum();
        Self { waves, norm }
    }

    /// Value in `[-1, 1]` at normalised coordinates.
    fn at(&self, u: f64, v: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(amp, freq, theta, phase)| {
                amp * (TAU * freq * (u * theta.cos() + v * theta.sin()) + phase).sin()
            })
            .sum::<f64>()
            / self.norm
    }
}

/// Per-video appearance that stays fixed across frames.
struct Identity {
    width: u32,
    height: u32,
    face_c: (i64, i64),
    face_axes: (f64, f64),
    mouth_c: (i64, i64),
    background: Vec<i16>,
    skin: Texture,
    lips: Texture,
    speech: [(f64, f64); 2],
}

impl Identity {
    fn new(width: u32, height: u32, rng: &mut impl Rng) -> Self {
        let (w, h) = (width as f64, height as f64);
        let face_axes = (0.315 * w, 0.46 * h);
        let face_c = ((w / 2.0) as i64, (0.485 * h).round() as i64);
        let mouth_c = (face_c.0, face_c.1 + (0.55 * face_axes.1).round() as i64);
        let background = (0..width * height * 3)
            .map(|_| rng.random_range(-12..=12))
            .collect();
        Self {
            width,
            height,
            face_c,
            face_axes,
            mouth_c,
            background,
            skin: Texture::sample(rng),
            lips: Texture::sample(rng),
            speech: [
                (rng.random_range(1.2..2.5), rng.random_range(0.0..TAU)),
                (rng.random_range(2.5..4.5), rng.random_range(0.0..TAU)),
            ],
        }
    }

    fn openness(&self, t: f64) -> f64 {
        let [(f1, p1), (f2, p2)] = self.speech;
        (0.45 + 0.45 * (TAU * f1 * t + p1).sin() + 0.25 * (TAU * f2 * t + p2).sin()).clamp(0.0, 1.0)
    }

    fn face_box(&self) -> PixelBox {
        ellipse_box(self.face_c, self.face_axes)
    }
}

struct MouthShape {
    outer: (f64, f64),
    inner: (f64, f64),
    tint: [f64; 3],
    texture_mix: Option<(Texture, f64)>,
}

fn ellipse_box(c: (i64, i64), axes: (f64, f64)) -> PixelBox {
    let (ax, ay) = (axes.0.floor() as i64, axes.1.floor() as i64);
    PixelBox {
        x0: c.0 - ax,
        y0: c.1 - ay,
        x1: c.0 + ax,
        y1: c.1 + ay,
    }
}

fn inside(x: i64, y: i64, c: (i64, i64), axes: (f64, f64)) -> bool {
    let dx = (x - c.0) as f64 / axes.0;
    let dy = (y - c.1) as f64 / axes.1;
    dx * dx + dy * dy <= 1.0
}

fn mouth_shape(id: &Identity, openness: f64, strength: f64, fake: bool, rng: &mut impl Rng) -> MouthShape {
    let fw = 2.0 * id.face_axes.0;
    let mut outer = (0.265 * fw, 0.065 * fw + 0.08 * fw * openness);
    let mut inner = (0.175 * fw, 0.09 * fw * openness);
    let mut tint = [0.0; 3];
    let mut texture_mix = None;
    if fake && strength > 0.0 {
        let mut jitter = |scale: f64| 1.0 + scale * strength * rng.random_range(-1.0..1.0);
        outer.0 *= jitter(0.15);
        outer.1 *= jitter(0.3);
        inner.0 *= jitter(0.2);
        inner.1 *= jitter(0.4);
        tint = [
            15.0 * strength * rng.random_range(-1.0..1.0),
            0.0,
            15.0 * strength * rng.random_range(-1.0..1.0),
        ];
        texture_mix = Some((Texture::sample(rng), strength));
    }
    inner.0 = inner.0.min(outer.0 - 4.0);
    inner.1 = inner.1.min(outer.1 - 2.0);
    if inner.1 < 1.0 {
        inner.1 = 0.0;
    }
    MouthShape {
        outer,
        inner,
        tint,
        texture_mix,
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn render(id: &Identity, mouth: &MouthShape, frame_index: usize, rng: &mut impl Rng) -> (RgbImage, LandmarkFrame) {
    let fw = 2.0 * id.face_axes.0;
    let fh = 2.0 * id.face_axes.1;
    let face_box = id.face_box();
    let (fcx, fy0) = (id.face_c.0 as f64, face_box.y0 as f64);
    let eye_y = (fy0 + 0.40 * fh).round() as i64;
    let eyes = [
        ((fcx - 0.2 * fw).round() as i64, eye_y),
        ((fcx + 0.2 * fw).round() as i64, eye_y),
    ];
    let brow_y = (fy0 + 0.28 * fh).round() as i64;
    let open = mouth.inner.1 >= 1.0;

    let img = RgbImage::from_fn(id.width, id.height, |xu, yu| {
        let (x, y) = (xu as i64, yu as i64);
        let base = ((yu * id.width + xu) * 3) as usize;
        let noise: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2..=2) as f64);
        let color: [f64; 3] = if inside(x, y, id.mouth_c, mouth.outer) {
            let u = (x - id.mouth_c.0) as f64 / mouth.outer.0;
            let v = (y - id.mouth_c.1) as f64 / mouth.outer.1;
            let mut tex = id.lips.at(u, v);
            if let Some((frame_tex, s)) = &mouth.texture_mix {
                tex = (1.0 - s) * tex + s * frame_tex.at(u, v);
            }
            if open && inside(x, y, id.mouth_c, mouth.inner) {
                let c = ToyColors::CAVITY;
                [c[0] as f64 + 8.0 * tex, c[1] as f64 + 5.0 * tex, c[2] as f64 + 5.0 * tex]
            } else {
                let c = ToyColors::LIP;
                [
                    c[0] as f64 + 25.0 * tex + mouth.tint[0],
                    c[1] as f64 + 15.0 * tex,
                    c[2] as f64 + 15.0 * tex + mouth.tint[2],
                ]
            }
        } else if inside(x, y, id.face_c, id.face_axes) {
            let eye = eyes
                .iter()
                .find(|c| inside(x, y, **c, (0.08 * fw, 0.035 * fh)));
            let c = if let Some(ec) = eye {
                if inside(x, y, *ec, (0.03 * fw, 0.03 * fw)) {
                    ToyColors::IRIS
                } else {
                    ToyColors::SCLERA
                }
            } else if eyes
                .iter()
                .any(|c| inside(x, y, (c.0, brow_y), (0.11 * fw, 0.012 * fh + 1.0)))
            {
                ToyColors::BROW
            } else if inside(
                x,
                y,
                (id.face_c.0, (fy0 + 0.52 * fh).round() as i64),
                (0.03 * fw, 0.1 * fh),
            ) {
                ToyColors::NOSE
            } else {
                ToyColors::SKIN
            };
            let tex = 6.0 * id.skin.at(x as f64 / fw, y as f64 / fh);
            [c[0] as f64 + tex, c[1] as f64 + tex, c[2] as f64 + tex]
        } else {
            let c = ToyColors::BACKGROUND;
            std::array::from_fn(|k| c[k] as f64 + id.background[base + k] as f64)
        };
        Rgb(std::array::from_fn(|k| clamp_u8(color[k] + noise[k])))
    });

    let outer_box = ellipse_box(id.mouth_c, mouth.outer);
    let inner_box = open.then(|| ellipse_box(id.mouth_c, mouth.inner));
    let lm = landmarks_from_boxes(face_box, outer_box, inner_box, frame_index);
    (img, lm)
}

/// Renders one video whose frames are labelled by `frame_labels`; frames
/// labelled fake get the per-frame mouth perturbation.
fn render_video(
    width: u32,
    height: u32,
    fps: f64,
    frame_labels: &[Label],
    strength: f64,
    seed: u64,
) -> Result<ToyVideo, VideoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = Identity::new(width, height, &mut rng);
    let mut frames = Vec::with_capacity(frame_labels.len());
    let mut landmarks = Vec::with_capacity(frame_labels.len());
    for (i, label) in frame_labels.iter().enumerate() {
        let mut frame_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64 + 1));
        let shape = mouth_shape(&id, id.openness(i as f64 / fps), strength, label.is_fake(), &mut frame_rng);
        let (img, lm) = render(&id, &shape, i, &mut frame_rng);
        frames.push(img);
        landmarks.push(lm);
    }
    let label = if frame_labels.iter().any(|l| l.is_fake()) {
        Label::Fake
    } else {
        Label::Real
    };
    Ok(ToyVideo {
        stream: FrameStream::new(frames, fps)?,
        landmarks,
        label,
        mask: frame_labels.to_vec(),
    })
}

impl ToySpec {
    /// Renders the `index`-th video of the dataset in memory.
    pub fn render(&self, index: usize) -> Result<ToyVideo, VideoError> {
        self.validate()?;
        let label = if index % 2 == 0 { Label::Real } else { Label::Fake };
        let labels = vec![label; self.frame_count()];
        render_video(
            self.width,
            self.height,
            self.fps,
            &labels,
            self.inconsistency_strength,
            mix_seed(self.seed, index as u64),
        )
    }
}

/// Writes `spec.count` videos (alternating real/fake, losslessly encoded)
/// plus `manifest.tsv` into `out_dir`.
pub fn synthesize_toy_dataset(spec: &ToySpec, out_dir: &Path) -> Result<DatasetManifest, VideoError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| VideoError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut manifest = DatasetManifest {
        entries: Vec::with_capacity(spec.count),
        split: spec.split,
    };
    for i in 0..spec.count {
        let video = spec.render(i)?;
        let name = format!(
            "{}_{:03}.avi",
            if video.label == Label::Real { "real" } else { "fake" },
            i
        );
        let path = out_dir.join(name);
        write_video(&path, &video.stream, Codec::Png)?;
        manifest.entries.push(ManifestEntry {
            path,
            label: video.label,
            mask: Some(video.mask),
        });
    }
    save_manifest(&manifest, &out_dir.join("manifest.tsv")).map_err(|e| VideoError::Io {
        path: out_dir.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    Ok(manifest)
}

/// One identity speaking continuously, with whole segments of
/// `segment_seconds` each rendered real or fake per `segments`.
pub fn synthesize_concat_video(
    segments: &[Label],
    segment_seconds: f64,
    fps: f64,
    strength: f64,
    seed: u64,
) -> Result<ConcatVideo, VideoError> {
    let per_segment = (segment_seconds * fps).round() as usize;
    if segments.is_empty() || per_segment == 0 {
        return Err(VideoError::SpecTooSmall("no segments to render".into()));
    }
    let labels: Vec<Label> = segments
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, per_segment))
        .collect();
    let spec = ToySpec::default();
    render_video(spec.width, spec.height, fps, &labels, strength, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{LandmarkProvider, ToyProvider};

    #[test]
    fn render_has_expected_length() {
        let spec = ToySpec { duration: 2.0, ..ToySpec::default() };
        let v = spec.render(0).unwrap();
        assert_eq!(v.stream.len(), 50);
        assert_eq!(v.stream.fps(), 25.0);
        assert_eq!(v.landmarks.len(), 50);
    }

    #[test]
    fn toy_provider_recovers_injected_landmarks_exactly() {
        for strength in [0.0, 0.5, 1.0] {
            let spec = ToySpec { inconsistency_strength: strength, duration: 1.0, ..ToySpec::default() };
            for idx in 0..4 {
                let v = spec.render(idx).unwrap();
                let mut p = ToyProvider::new();
                for (i, frame) in v.stream.frames().iter().enumerate() {
                    let got = p.detect(frame, i).expect("face");
                    assert_eq!(got, v.landmarks[i], "video {idx} frame {i} strength {strength}");
                }
            }
        }
    }

    #[test]
    fn masks_match_whole_video_labels() {
        let spec = ToySpec { count: 4, ..ToySpec::default() };
        for i in 0..4 {
            let v = spec.render(i).unwrap();
            assert_eq!(v.mask.len(), 75);
            assert!(v.mask.iter().all(|&l| l == v.label));
        }
    }

    #[test]
    fn too_small_specs_rejected() {
        let short = ToySpec { duration: 0.5, ..ToySpec::default() };
        assert!(matches!(short.validate(), Err(VideoError::SpecTooSmall(_))));
        let one = ToySpec { count: 1, ..ToySpec::default() };
        assert!(matches!(one.validate(), Err(VideoError::SpecTooSmall(_))));
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = ToySpec { duration: 1.0, ..ToySpec::default() };
        assert_eq!(spec.render(3).unwrap().stream, spec.render(3).unwrap().stream);
    }

    #[test]
    fn concat_mask_follows_segments() {
        let v = synthesize_concat_video(&[Label::Real, Label::Fake, Label::Real], 1.0, 25.0, 0.8, 5).unwrap();
        assert_eq!(v.stream.len(), 75);
        assert!(v.mask[..25].iter().all(|l| *l == Label::Real));
        assert!(v.mask[25..50].iter().all(|l| *l == Label::Fake));
        assert_eq!(v.label, Label::Fake);
    }
}
